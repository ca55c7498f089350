"""Command line: ``vhe {train,embed,linkpred,classify,unseen,synth,gradcheck}``.

Settings come from a flat ``key = value`` file (``--config``) and from flags
named after the keys (``--edge-ratio 0.55`` sets ``edge_ratio``); flags win over
the file, the file wins over the defaults below. Every command first echoes the
resolved settings to stderr in the same ``key = value`` format, so the echo can
be saved and fed back as a config file.

Exit status: 0 on success, 1 when a run fails, 2 for usage, config or input
file errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields

log = logging.getLogger("vhe")

COMMANDS = ("train", "embed", "linkpred", "classify", "unseen", "synth", "gradcheck")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # input files
    edges: str = ""
    texts: str = ""
    labels: str = ""
    word_vectors: str = ""
    min_count: int = 1
    edge_ratio: float = 0.85
    # model and training, as in TrainConfig
    d: int = 100
    d_w: int = 100
    max_len: int = 128
    kernels: int = 200
    kernel_width: int = 5
    lam: float = 0.99
    alpha: float = 0.2
    pi0: float = 0.0  # 0: sparsity of the training graph
    neg_per_pos: int = 1
    batch_size: int = 64
    epochs: int = 10
    lr: float = 1e-4
    seed: int = 0
    deterministic: bool = True
    n_samples: int = 1
    checkpoint_every: int = 0
    emb_init: float = 0.05
    # artifacts
    checkpoint: str = "vhe.ckpt"
    trace: str = "trace.tsv"
    embeddings: str = "embeddings.tsv"
    report: str = ""
    # evaluation
    method: str = "posterior_pi"
    contexts: int = 100  # contexts per vertex for global embeddings; 0 = all
    known_edges: bool = False
    eval_seed: int = 0
    vertices: str = "all"
    label_ratio: float = 0.5
    repeats: int = 10
    # unseen vertices
    unseen_texts: str = ""
    unseen_steps: int = 100
    unseen_lr: float = 1e-2
    unseen_contexts: int = 64
    # synthetic data
    synth_prefix: str = "synth"
    synth_n: int = 200
    synth_d: int = 8
    synth_lam: float = 0.9
    synth_sparsity: float = 0.02
    synth_vocab: int = 192
    synth_classes: int = 7
    # gradient check
    dims: str = "tiny"
    # runtime
    threads: int = 1
    log_level: str = "info"

    def validate(self):
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not 0.0 < self.edge_ratio <= 1.0:
            raise ConfigError(f"edge_ratio must lie in (0, 1], got {self.edge_ratio}")
        if self.method not in ("posterior_pi", "cosine_global"):
            raise ConfigError(f"method must be posterior_pi or cosine_global, got {self.method!r}")
        if self.contexts < 0 or self.unseen_contexts < 1 or self.unseen_steps < 0:
            raise ConfigError("contexts must be >= 0, unseen_contexts >= 1 and unseen_steps >= 0")
        if not 0.0 < self.label_ratio < 1.0:
            raise ConfigError(f"label_ratio must lie in (0, 1), got {self.label_ratio}")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"unknown log_level {self.log_level!r}")
        if self.dims not in ("tiny", "small"):
            raise ConfigError(f"dims must be tiny or small, got {self.dims!r}")
        if self.threads > 1 and self.deterministic:
            log.warning("threads > 1: BLAS reductions may not be bit-reproducible")

    def train_config(self):
        from .trainer import TrainConfig

        names = {f.name for f in fields(TrainConfig)}
        kw = {k: getattr(self, k) for k in names}
        kw["pi0"] = self.pi0 if self.pi0 > 0 else None
        try:
            return TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from None
    return raw.strip()


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            if key not in FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, val.strip())
    return out


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vhe", description="Variational homophilic embedding.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value settings file")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper())
    return parser


def resolve(args) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for key in FIELD_TYPES:
        raw = getattr(args, key)
        if raw is not None:
            values[key] = _convert(key, raw)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- commands


def _need(cfg, *keys):
    for k in keys:
        if not getattr(cfg, k):
            raise ConfigError(f"{k} must be set for this command")


def _load(cfg):
    from .graph_data import load_network, split_edges

    _need(cfg, "edges", "texts")
    net, vocab = load_network(cfg.edges, cfg.texts, cfg.labels or None, cfg.max_len, cfg.min_count)
    return net, vocab, split_edges(net, cfg.edge_ratio, cfg.seed)


def _load_model(cfg):
    from .optim import load_checkpoint
    from .trainer import Model, init_params

    net, vocab, split = _load(cfg)
    tc = cfg.train_config()
    store = load_checkpoint(cfg.checkpoint) if os.path.isfile(cfg.checkpoint) else None
    if store is None:
        raise FileNotFoundError(f"no such file: {cfg.checkpoint}")
    expected = {k: v.shape for k, v in init_params(tc, net.n_vertices, len(vocab)).items()}
    got = store.shapes()
    if got != expected:
        rows = [
            f"  {k}: checkpoint {got.get(k)} vs config {expected.get(k)}"
            for k in sorted(set(got) | set(expected))
            if got.get(k) != expected.get(k)
        ]
        raise ConfigError("checkpoint does not match the configured dimensions:\n" + "\n".join(rows))
    return Model(store.params, tc, net, tc.resolved_pi0(split)), net, vocab, split


def _write_embeddings(path, ids, rows):
    with open(path, "w") as fh:
        for i, row in zip(ids, rows):
            fh.write(f"{i}\t" + " ".join(f"{x:.17g}" for x in row) + "\n")


def _embeddings(cfg, model, ids=None):
    import numpy as np

    from .inference import global_embedding

    n = model.network.n_vertices
    ids = range(n) if ids is None else ids
    S = n - 1 if cfg.contexts == 0 else cfg.contexts
    rng = np.random.default_rng(cfg.eval_seed)
    known = None
    if cfg.known_edges:
        known = {(int(i), int(j)) for i, j in model.network.edges}
    return np.stack([global_embedding(i, model, np.arange(n), S, rng, known).combined for i in ids])


def cmd_train(cfg, out):
    import numpy as np

    from .graph_data import read_word_vectors, vector_table
    from .trainer import TrainingDiverged, train

    net, vocab, split = _load(cfg)
    tc = cfg.train_config()
    table = None
    if cfg.word_vectors:
        rng = np.random.default_rng(cfg.seed + 2)
        table = vector_table(vocab, read_word_vectors(cfg.word_vectors), tc.d_w, tc.emb_init, rng)
    try:
        res = train(
            net, split, tc, vocab_size=len(vocab), trace_path=cfg.trace or None,
            checkpoint_path=cfg.checkpoint, word_vectors=table,
        )
    except TrainingDiverged as exc:
        from .optim import save_checkpoint

        save_checkpoint(exc.store, cfg.checkpoint)
        raise RuntimeError(f"{exc}; last good parameters written to {cfg.checkpoint}") from None
    last = res.trace[-1][2] if res.trace else float("nan")
    out.write(f"steps\t{res.store.step}\nfinal_loss\t{last!r}\ncheckpoint\t{cfg.checkpoint}\n")


def cmd_embed(cfg, out):
    model, net, _, _ = _load_model(cfg)
    if cfg.vertices == "all":
        ids = list(range(net.n_vertices))
    else:
        try:
            ids = [int(x) for x in cfg.vertices.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"vertices must be 'all' or a comma-separated id list, got {cfg.vertices!r}") from None
        bad = [i for i in ids if not 0 <= i < net.n_vertices]
        if bad:
            raise ConfigError(f"vertex ids out of range: {bad}")
    _write_embeddings(cfg.embeddings, ids, _embeddings(cfg, model, ids))
    out.write(f"embeddings\t{cfg.embeddings}\t{len(ids)}\n")


def cmd_linkpred(cfg, out):
    import numpy as np

    from .evaluate import link_prediction_eval

    model, _, _, split = _load_model(cfg)
    emb = _embeddings(cfg, model) if cfg.method == "cosine_global" else None
    rep = link_prediction_eval(model, split, cfg.method, np.random.default_rng(cfg.eval_seed), embeddings=emb)
    text = "".join(line + "\n" for line in rep.lines())
    out.write(text)
    if cfg.report:
        with open(cfg.report, "w") as fh:
            fh.write(text)


def cmd_classify(cfg, out):
    import numpy as np

    from .evaluate import classify_vertices

    _need(cfg, "labels")
    model, net, _, _ = _load_model(cfg)
    mean, std = classify_vertices(
        _embeddings(cfg, model), net.labels, cfg.label_ratio, cfg.repeats, np.random.default_rng(cfg.eval_seed)
    )
    text = f"accuracy\t{mean!r}\t{std!r}\n"
    out.write(text)
    if cfg.report:
        with open(cfg.report, "w") as fh:
            fh.write(text)


def cmd_unseen(cfg, out):
    import numpy as np

    from .graph_data import DataError, _read_lines, tokenize
    from .inference import embed_unseen

    _need(cfg, "unseen_texts")
    if not os.path.isfile(cfg.unseen_texts):
        raise FileNotFoundError(f"no such file: {cfg.unseen_texts}")
    model, net, vocab, _ = _load_model(cfg)
    rng = np.random.default_rng(cfg.eval_seed)
    ids, rows = [], []
    for lineno, line in _read_lines(cfg.unseen_texts):
        key, sep, text = line.partition("\t")
        if not sep:
            raise DataError(f"{cfg.unseen_texts}:{lineno}: expected 'id<TAB>text', got {line!r}")
        tokens, length = vocab.encode(tokenize(text), cfg.max_len)
        if length == 0:
            raise DataError(f"{cfg.unseen_texts}:{lineno}: empty text")
        ctx = rng.choice(net.n_vertices, size=min(cfg.unseen_contexts, net.n_vertices), replace=False)
        res = embed_unseen(tokens, length, model, ctx, steps=cfg.unseen_steps, lr=cfg.unseen_lr, rng=rng)
        ids.append(key.strip())
        rows.append(res.embedding.combined)
    _write_embeddings(cfg.embeddings, ids, rows)
    out.write(f"embeddings\t{cfg.embeddings}\t{len(ids)}\n")


def cmd_synth(cfg, out):
    import numpy as np

    from .evaluate import synth_network
    from .graph_data import write_network, write_word_vectors

    if cfg.max_len < cfg.d_w:
        raise ConfigError(f"synthetic texts name every feature once: max_len ({cfg.max_len}) must be >= d_w ({cfg.d_w})")
    s = synth_network(
        N=cfg.synth_n, d=cfg.synth_d, d_w=cfg.d_w, lam=cfg.synth_lam, sparsity=cfg.synth_sparsity,
        vocab_size=cfg.synth_vocab, L=cfg.max_len, seed=cfg.seed, n_classes=cfg.synth_classes,
    )
    paths = write_network(s.network, s.vocab, cfg.synth_prefix)
    prefix = str(paths["edges"].with_suffix(""))
    write_word_vectors(s.vocab, s.word_vectors, prefix + ".vectors")
    np.savetxt(prefix + ".codes", s.codes, fmt="%.17g", delimiter="\t")
    out.write(f"vertices\t{s.network.n_vertices}\nedges\t{len(s.network.edges)}\n")
    for name in ("edges", "texts", "labels"):
        out.write(f"{name}\t{paths[name]}\n")
    out.write(f"word_vectors\t{prefix}.vectors\ncodes\t{prefix}.codes\n")


def cmd_gradcheck(cfg, out):
    from .checks import gradient_suite, report_lines

    reports = gradient_suite(cfg.dims, seed=cfg.seed)
    out.write("".join(line + "\n" for line in report_lines(reports)))
    failed = [name for name, rep in reports.items() if not rep.passed]
    if failed:
        raise RuntimeError("gradient check failed for: " + ", ".join(failed))


HANDLERS = {
    "train": cmd_train,
    "embed": cmd_embed,
    "linkpred": cmd_linkpred,
    "classify": cmd_classify,
    "unseen": cmd_unseen,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"vhe: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=cfg.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(cfg.threads)  # only effective if numpy is not loaded yet
    sys.stderr.write(f"# vhe {args.command}: resolved config\n" + format_config(cfg))

    from .graph_data import DataError

    try:
        HANDLERS[args.command](cfg, out)
    except (ConfigError, FileNotFoundError, DataError) as exc:
        print(f"vhe: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"vhe: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
