"""The ``hmcd`` command.

Subcommands cover the full pipeline: ingest raw message records into flow
corpora, featurize corpora, build field dictionaries, train field GANs and
generate adversarial flows, train and run the classifier, run resampled
experiments, and self-check gradients.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unparseable input, corpus/checkpoint mismatch, not enough data), 3
internal error. Diagnostics go to stderr; file outputs carry a provenance
block recording the resolved configuration, seed, and input digests.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import CliConfig, SEED_ENV_VAR, check_bounds, load_config, resolve_config
from .errors import ConfigError, CorruptRecord, HmcdError, MessageParseError, UsageError
from .evaluation import PRESETS, ExperimentConfig, metrics, emit_report, run_experiment
from .features import featurize_flows, save_features
from .gaf.dictionary import build_dictionary, dictionary_hash, load_dictionary, save_dictionary
from .gaf.gan import FieldGanConfig, gradient_penalty, init_field_gan, save_field_gan
from .gaf.generate import GenerationConfig, generate_flows, train_generation_gans
from .http.corpus import load_corpus, save_corpus
from .http.flows import assemble_flows
from .http.message import Direction, FlowKey, Label
from .http.parser import parse_http_message
from .classifier import (
    Architecture,
    FlowClassifier,
    TrainConfig,
    TrainedModel,
    forward_batch,
    init_model,
    predict,
    train,
)
from .nn import ops
from .nn.gradcheck import gradient_check
from .nn.tensor import Tensor


def _eprint(*args) -> None:
    print(*args, file=sys.stderr)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _provenance(cfg: CliConfig, inputs: dict[str, Path]) -> dict:
    # deliberately no wall-clock field: the same config and seed must
    # produce byte-identical output files
    return {
        "tool": "hmcd",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {
            name: {"path": str(p), "sha256": _sha256_file(p)}
            for name, p in inputs.items()
            if p is not None and Path(p).exists()
        },
    }


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; our usage errors are 1
        raise UsageError(message)


_CONFIG_FLAGS = {
    "seed": int,
    "idle_gap_s": float,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "folds": int,
    "repeats": int,
    "gaf_count": int,
    "preset": str,
    "threshold": int,
    "seq_len": int,
    "noise_dim": int,
    "gp_lambda": float,
    "critic_steps": int,
    "gan_iterations": int,
    "gan_batch_size": int,
    "gan_learning_rate": float,
    "conv_layers": int,
    "dense_layers": int,
    "max_retries": int,
    "fields": str,
    "jobs": int,
}


def _add_config_flags(p: argparse.ArgumentParser, names: list[str]) -> None:
    p.add_argument("--config", help="key=value configuration file")
    for name in names:
        flag = "--" + name.replace("_", "-")
        if name == "lenient":
            p.add_argument(flag, action="store_true", default=None)
        else:
            p.add_argument(flag, type=_CONFIG_FLAGS[name], default=None, dest=name)


def _resolve(args: argparse.Namespace) -> CliConfig:
    file_values = load_config(args.config) if getattr(args, "config", None) else None
    overrides = {}
    for name in _CONFIG_FLAGS:
        if hasattr(args, name) and getattr(args, name) is not None:
            overrides[name] = check_bounds(name, getattr(args, name))
    if getattr(args, "lenient", None):
        overrides["lenient"] = True
    return resolve_config(file_values, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="hmcd", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hmcd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw message records into a flow corpus")
    p.add_argument("--input", required=True, help="NDJSON of raw message records")
    p.add_argument("--output", required=True, help="corpus file to write")
    p.add_argument("--label", default="unlabeled", choices=[l.value for l in Label])
    p.add_argument("--lenient", action="store_true", default=None)
    _add_config_flags(p, ["seed", "idle_gap_s"])

    p = sub.add_parser("featurize", help="extract feature records from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True, help="feature record file to write")
    _add_config_flags(p, ["seed", "jobs"])

    p = sub.add_parser("build-dict", help="build field word dictionaries")
    p.add_argument("--malicious", required=True)
    p.add_argument("--benign", required=True)
    p.add_argument("--output", required=True)
    _add_config_flags(p, ["seed", "threshold"])

    p = sub.add_parser("gen-gaf", help="train field GANs and generate flows")
    p.add_argument("--benign", required=True, help="benign corpus: templates and training text")
    p.add_argument("--dict", required=True, dest="dict_path")
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--output", required=True, help="corpus of generated flows")
    p.add_argument("--save-gans", help="directory for per-field GAN checkpoints")
    _add_config_flags(
        p,
        ["seed", "seq_len", "noise_dim", "gp_lambda", "critic_steps", "gan_iterations",
         "gan_batch_size", "gan_learning_rate", "conv_layers", "dense_layers",
         "max_retries", "fields"],
    )

    p = sub.add_parser("train", help="train the flow classifier with k-fold validation")
    p.add_argument("--malicious", required=True)
    p.add_argument("--benign", required=True)
    p.add_argument("--gaf", help="corpus of generated flows joining the training folds")
    p.add_argument("--output", required=True, help="model checkpoint to write")
    p.add_argument("--report", help="JSON metrics report path")
    _add_config_flags(p, ["seed", "epochs", "batch_size", "learning_rate", "folds"])

    p = sub.add_parser("predict", help="score flows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True, help="JSON predictions path")
    _add_config_flags(p, ["seed"])

    p = sub.add_parser("evaluate", help="run a resampled train/test experiment")
    p.add_argument("--malicious", required=True)
    p.add_argument("--benign", required=True)
    p.add_argument("--gaf", help="corpus of generated flows")
    p.add_argument("--report", required=True)
    p.add_argument("--train-malicious", type=int, dest="train_malicious")
    p.add_argument("--train-benign", type=int, dest="train_benign")
    p.add_argument("--test-malicious", type=int, dest="test_malicious")
    p.add_argument("--test-benign", type=int, dest="test_benign")
    _add_config_flags(
        p, ["seed", "preset", "repeats", "gaf_count", "epochs", "batch_size",
            "learning_rate", "folds"],
    )

    p = sub.add_parser("gradcheck", help="verify analytic gradients numerically")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)
    _add_config_flags(p, ["seed"])
    return parser


# ---------------------------------------------------------------------------
# subcommands


def _load_ingest_record(line: str, lineno: int) -> tuple[FlowKey, bytes, Direction, int]:
    try:
        obj = json.loads(line)
        key = FlowKey(
            src_ip=obj["src_ip"],
            src_port=int(obj["src_port"]),
            dst_ip=obj["dst_ip"],
            dst_port=int(obj["dst_port"]),
            transport=obj.get("transport", "TCP"),
        )
        raw = base64.b64decode(obj["raw"])
        direction = Direction(obj["direction"])
        ts = int(obj["ts_micros"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptRecord(f"bad ingest record: {exc}", lineno) from exc
    return key, raw, direction, ts


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    records = []
    text = Path(args.input).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, raw, direction, ts = _load_ingest_record(line, lineno)
        try:
            msg = parse_http_message(raw, direction, ts, lenient=cfg.lenient)
        except MessageParseError as exc:
            raise type(exc)(f"record at line {lineno}: {exc}", exc.offset)
        records.append((key, msg))
    prefix = Path(args.output).stem or "flow"
    flows = assemble_flows(
        records, idle_gap_s=cfg.idle_gap_s, label=Label(args.label), id_prefix=prefix
    )
    manifest = save_corpus(
        flows,
        args.output,
        meta={"provenance": _provenance(cfg, {"input": Path(args.input)})},
        source="ingest",
    )
    _eprint(
        f"ingested {len(records)} messages into {manifest.records} flows "
        f"({args.output}); labels {manifest.labels}"
    )
    return 0


def _featurize_parallel(flows, jobs: int):
    if jobs <= 1 or len(flows) < 4 * jobs:
        return featurize_flows(flows)
    chunks = [flows[i::jobs] for i in range(jobs)]
    samples, discarded = [], []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for s, d in pool.map(featurize_flows, chunks):
            samples.extend(s)
            discarded.extend(d)
    return samples, discarded


def cmd_featurize(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    flows, manifest = load_corpus(args.corpus)
    samples, discarded = _featurize_parallel(flows, cfg.jobs)
    save_features(
        samples,
        discarded,
        args.output,
        extra_header={"provenance": _provenance(cfg, {"corpus": Path(args.corpus)})},
    )
    _eprint(
        f"featurized {len(samples)} of {manifest.records} flows "
        f"({len(discarded)} discarded) -> {args.output}"
    )
    return 0


def cmd_build_dict(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    mal, _ = load_corpus(args.malicious)
    ben, _ = load_corpus(args.benign)
    fd = build_dictionary(mal, ben, threshold=cfg.threshold)
    prov = _provenance(
        cfg, {"malicious": Path(args.malicious), "benign": Path(args.benign)}
    )
    save_dictionary(fd, args.output, meta={"provenance": prov})
    words = sum(len(v.words) for v in fd.fields.values())
    _eprint(
        f"dictionary: {len(fd.fields)} fields, {words} words, threshold {cfg.threshold}, "
        f"sha256 {dictionary_hash(fd)[:16]} -> {args.output}"
    )
    return 0


def _gan_config(cfg: CliConfig) -> FieldGanConfig:
    return FieldGanConfig(
        seq_len=cfg.seq_len,
        noise_dim=cfg.noise_dim,
        gp_lambda=cfg.gp_lambda,
        critic_steps=cfg.critic_steps,
        learning_rate=cfg.gan_learning_rate,
        batch_size=cfg.gan_batch_size,
        iterations=cfg.gan_iterations,
        conv_layers=cfg.conv_layers,
        dense_layers=cfg.dense_layers,
        seed=cfg.seed,
    )


def cmd_gen_gaf(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    benign, _ = load_corpus(args.benign)
    fd = load_dictionary(args.dict_path)
    gen_cfg = GenerationConfig(
        fields=cfg.field_list(), max_retries=cfg.max_retries, gan=_gan_config(cfg)
    )
    gans = train_generation_gans(benign, fd, gen_cfg)
    _eprint(f"trained GANs for fields: {sorted(gans)}")
    if args.save_gans:
        out_dir = Path(args.save_gans)
        out_dir.mkdir(parents=True, exist_ok=True)
        digest = dictionary_hash(fd)
        for name, gan in gans.items():
            safe = "".join(ch if ch.isalnum() else "_" for ch in name)
            save_field_gan(gan, out_dir / f"gan_{safe}.hmcd", dict_hash=digest)
    flows = generate_flows(
        args.count, benign, fd, gans, seed=cfg.seed, max_retries=cfg.max_retries
    )
    prov = _provenance(
        cfg, {"benign": Path(args.benign), "dictionary": Path(args.dict_path)}
    )
    manifest = save_corpus(
        flows, args.output, meta={"provenance": prov}, source="gaf"
    )
    _eprint(f"generated {manifest.records} flows -> {args.output}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    mal, _ = load_corpus(args.malicious)
    ben, _ = load_corpus(args.benign)
    gaf_samples = []
    inputs = {"malicious": Path(args.malicious), "benign": Path(args.benign)}
    if args.gaf:
        gaf_flows, _ = load_corpus(args.gaf)
        gaf_samples, gaf_discarded = featurize_flows(gaf_flows)
        inputs["gaf"] = Path(args.gaf)
        if gaf_discarded:
            _eprint(f"warning: {len(gaf_discarded)} generated flows discarded")
    samples, discarded = featurize_flows(mal + ben)
    if discarded:
        _eprint(f"warning: {len(discarded)} flows discarded at featurization")
    tc = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        folds=cfg.folds,
        seed=cfg.seed,
    )
    result = train(samples, gaf_samples, tc)
    result.model.meta["provenance"] = _provenance(cfg, inputs)
    result.model.save(args.output)
    for fr in result.fold_reports:
        m = fr.metrics
        _eprint(
            f"fold {fr.fold}: tp={fr.counts.tp} fp={fr.counts.fp} tn={fr.counts.tn} "
            f"fn={fr.counts.fn} P={_fmt(m.precision)} R={_fmt(m.recall)} "
            f"F1={_fmt(m.f1)} FPR={_fmt(m.fpr)}"
        )
    if args.report:
        report = metrics([fr.counts for fr in result.fold_reports], experiment_id="train-folds")
        emit_report(report, args.report)
    _eprint(f"model ({len(result.model.params)} tensors) -> {args.output}")
    return 0


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    model = TrainedModel.load(args.model)
    flows, _ = load_corpus(args.corpus)
    result = predict(model, flows)
    doc = {
        "scored": [
            {"flow_id": s.flow_id, "label": s.label.value, "score": s.score}
            for s in result.scored
        ],
        "discarded": result.discarded,
        "provenance": _provenance(
            cfg, {"model": Path(args.model), "corpus": Path(args.corpus)}
        ),
    }
    Path(args.output).write_text(json.dumps(doc, indent=2) + "\n")
    n_mal = sum(1 for s in result.scored if s.label is Label.MALICIOUS)
    _eprint(
        f"scored {len(result.scored)} flows ({n_mal} malicious, "
        f"{len(result.discarded)} discarded) -> {args.output}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    if cfg.preset:
        if cfg.preset not in PRESETS:
            raise UsageError(
                f"unknown preset {cfg.preset!r}; choose from {', '.join(sorted(PRESETS))}"
            )
        base = PRESETS[cfg.preset]
        counts = dict(
            train_malicious=base.train_malicious,
            train_benign=base.train_benign,
            test_malicious=base.test_malicious,
            test_benign=base.test_benign,
        )
        gaf_count = args.gaf_count if args.gaf_count is not None else base.gaf_count
        name = base.name
    else:
        counts = dict(
            train_malicious=args.train_malicious,
            train_benign=args.train_benign,
            test_malicious=args.test_malicious,
            test_benign=args.test_benign,
        )
        if any(v is None for v in counts.values()):
            raise UsageError("give --preset or all four --train-*/--test-* counts")
        gaf_count = cfg.gaf_count
        name = "custom"
    if gaf_count and not args.gaf:
        raise UsageError("gaf_count > 0 needs --gaf CORPUS")
    exp = ExperimentConfig(
        name=name, repeats=cfg.repeats, seed=cfg.seed, gaf_count=gaf_count, **counts
    )
    mal, _ = load_corpus(args.malicious)
    ben, _ = load_corpus(args.benign)
    gaf = load_corpus(args.gaf)[0] if args.gaf else []

    def factory(seed: int) -> FlowClassifier:
        return FlowClassifier(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            folds=cfg.folds,
            seed=seed,
        )

    inputs = {"malicious": Path(args.malicious), "benign": Path(args.benign)}
    if args.gaf:
        inputs["gaf"] = Path(args.gaf)
    report = run_experiment(exp, mal, ben, factory, gaf_flows=gaf)
    json_path, table_path = emit_report(
        report, args.report, extra_fields={"provenance": _provenance(cfg, inputs)}
    )
    for name_ in ("precision", "recall", "f1", "fpr"):
        s = report.macro[name_]
        _eprint(f"{name_}: {_fmt(s.mean)} (+{_fmt(s.plus)} / -{_fmt(s.minus)})")
    _eprint(f"report -> {json_path}, table -> {table_path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    rng = np.random.default_rng([cfg.seed, 71])
    arch = Architecture(
        image_shape=(6, 8),
        conv_size=(2, 3),
        pkt_stat_dim=5,
        p_dnn_width=3,
        lstm_hidden=4,
        flow_stat_dim=7,
        f_dnn_width=3,
        head_widths=(4, 3),
    )
    params = init_model(arch, seed=cfg.seed)
    images = Tensor(rng.uniform(0, 1, (2, 2) + arch.image_shape))
    pkt = Tensor(rng.uniform(0, 1, (2, 2, arch.pkt_stat_dim)))
    flow = Tensor(rng.uniform(0, 1, (2, arch.flow_stat_dim)))
    onehot = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))

    def classifier_loss():
        logits, _ = forward_batch(params, arch, images, pkt, flow)
        loss, _ = ops.softmax_cross_entropy_batch(logits, onehot)
        return loss

    report = gradient_check(classifier_loss, params, h=args.step, tolerance=args.tolerance)
    print("classifier loss gradients:")
    print(report.summary())

    gan_cfg = FieldGanConfig(seq_len=5, noise_dim=4, channels=3, dense_width=6, batch_size=2, seed=cfg.seed)
    gan = init_field_gan("gradcheck", 6, gan_cfg)
    real = np.eye(6)[rng.integers(0, 6, (2, 5))]
    fake = rng.uniform(0, 1, (2, 5, 6))
    eps = rng.uniform(0, 1, (2, 1, 1))

    def penalty_loss():
        return gradient_penalty(gan, real, fake, eps)

    gan_report = gradient_check(penalty_loss, gan.d_params, h=args.step, tolerance=args.tolerance)
    print("critic gradient-penalty gradients (through double backward):")
    print(gan_report.summary())
    ok = report.passed and gan_report.passed
    return 0 if ok else 3


_COMMANDS = {
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "build-dict": cmd_build_dict,
    "gen-gaf": cmd_gen_gaf,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def main(argv: list[str] | None = None) -> int:
    try:
        return dispatch(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse --help/--version
        return int(exc.code or 0)
    except UsageError as exc:
        _eprint(f"hmcd: {exc}")
        _eprint(build_parser().format_usage().rstrip())
        return 1
    except ConfigError as exc:
        _eprint(f"hmcd: {exc}")
        return 1
    except HmcdError as exc:
        _eprint(f"hmcd: {type(exc).__name__}: {exc}")
        return 2
    except Exception:
        import traceback

        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
