"""Command-line entry point: ``vjepa-fer <command> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from vjepa_fer.autodiff.checkpoint import load_checkpoint, save_checkpoint
from vjepa_fer.checks import run_all
from vjepa_fer.config import RunConfig
from vjepa_fer.errors import ConfigError, ProtocolError, VJepaError
from vjepa_fer.evalproto.evaluate import (
    HarmonizationMode, MetricsReport, confusion_from_votes, cross_evaluate, model_scorer, video_clips,
)
from vjepa_fer.evalproto.pca import pca2
from vjepa_fer.evalproto.report import write_confusion_csv, write_confusion_svg, write_metrics_json, write_pca_csv
from vjepa_fer.jepa import JepaModel, load_encoder, pretrain_run
from vjepa_fer.probe import encode_frozen, load_probe, probabilities, save_probe, train_probe, write_history
from vjepa_fer.autodiff import tensor as T
from vjepa_fer.videodata import labels as L
from vjepa_fer.videodata.folds import FoldPlan, cremad_table_plan, make_folds, split_records, verify_folds
from vjepa_fer.videodata.manifest import VideoRecord, dataset_labels, read_manifest
from vjepa_fer.videodata.synthetic import gen_synthetic
from vjepa_fer.vit import Encoder

logger = logging.getLogger("vjepa_fer")

COMMANDS = ("gen-synth", "pretrain", "train-probe", "eval", "cross-eval", "gradcheck", "splits-verify")
CONFIG_NAME = "config.ini"


def worker_count() -> int:
    raw = os.environ.get("JEPA_FER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"JEPA_FER_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def _out_dir(path: str | None, create: bool = True) -> Path:
    if not path:
        raise ConfigError("--out is required")
    out = Path(path)
    if create:
        out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg: RunConfig, key: str = "manifest") -> list[VideoRecord]:
    path = getattr(cfg, key)
    if not path:
        raise ConfigError(f"config key {key!r} (manifest path) is required")
    if not Path(path).is_file():
        raise FileNotFoundError(f"manifest {path} not found")
    return read_manifest(path)


def _fold_plan(cfg: RunConfig, records: list[VideoRecord]) -> FoldPlan:
    if cfg.fold_source in ("generated", "table"):
        return make_folds(records, cfg.k, cfg.fold_source, cfg.seed)
    return FoldPlan.load(cfg.fold_source)


def _fold_indices(cfg: RunConfig, plan: FoldPlan) -> list[int]:
    if cfg.fold < 0:
        return list(range(plan.k))
    if cfg.fold >= plan.k:
        raise ConfigError(f"--fold {cfg.fold} outside [0, {plan.k})")
    return [cfg.fold]


def _votings(cfg: RunConfig) -> list[str]:
    if cfg.voting == "both":
        return ["mv", "pbv"]
    if cfg.voting in ("mv", "pbv"):
        return [cfg.voting]
    raise ConfigError(f"voting must be mv, pbv or both, got {cfg.voting!r}")


def _modes(cfg: RunConfig) -> list[HarmonizationMode]:
    if cfg.mode == "both":
        return [HarmonizationMode.DROP_ONLY, HarmonizationMode.MERGE_CALM_NEUTRAL]
    return [HarmonizationMode.parse(cfg.mode)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_synth(cfg: RunConfig, out: Path) -> int:
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    manifest, records = gen_synthetic(out, cfg.synth_config())
    cfg.manifest = str(Path(manifest).resolve())
    cfg.write(out / CONFIG_NAME)
    labels = sorted({r.label for r in records})
    print(f"manifest: {manifest}")
    print(f"videos: {len(records)}  classes: {len(labels)}  subjects: {len({r.subject_id for r in records})}")
    return 0


def cmd_pretrain(cfg: RunConfig, out: Path) -> int:
    records = _manifest(cfg)
    model = JepaModel(cfg.encoder_config(), cfg.predictor_config(), seed=cfg.seed)
    result = pretrain_run(model, records, cfg.pretrain_config(), cfg.augment_config(), out)
    with open(out / "collapse.csv.tmp", "w") as fh:
        fh.write("step,embedding_variance\n")
        for step, var in result.embedding_var:
            fh.write(f"{step},{var!r}\n")
    os.replace(out / "collapse.csv.tmp", out / "collapse.csv")
    cfg.write(out / CONFIG_NAME)
    first = float(np.mean(result.losses[:20]))
    last = float(np.mean(result.losses[-20:]))
    print(f"checkpoint: {out / 'checkpoint.vjfc'}")
    print(f"loss: first-20 mean {first:.5f}  last-20 mean {last:.5f}  ratio {last / first:.3f}")
    return 0


def _frozen_encoder(cfg: RunConfig) -> Encoder:
    if cfg.encoder_init == "random":
        return Encoder(cfg.encoder_config(), np.random.default_rng(cfg.seed)).set_requires_grad(False)
    if cfg.encoder_init != "pretrained":
        raise ConfigError(f"encoder_init must be 'pretrained' or 'random', got {cfg.encoder_init!r}")
    if not cfg.encoder:
        raise ConfigError("config key 'encoder' (pre-training checkpoint) is required")
    return load_encoder(cfg.encoder, cfg.encoder_config(), which="target")


def cmd_train_probe(cfg: RunConfig, out: Path) -> int:
    records = _manifest(cfg)
    labels = dataset_labels(records)
    plan = _fold_plan(cfg, records)
    verify_folds(plan, records)
    encoder = _frozen_encoder(cfg)
    save_checkpoint(out / "encoder.vjfc", encoder.state_dict("encoder."))
    plan.save(out / "folds.json")
    pcfg = cfg.probe_config()
    aug = cfg.augment_config()
    folds = _fold_indices(cfg, plan)

    def run(i):
        probe, history = train_probe(encoder, records, labels, plan, i, pcfg, aug)
        save_probe(out / f"probe_fold{i}.vjfc", probe)
        write_history(out / f"history_fold{i}.csv", history)
        return i, history

    workers = min(worker_count(), len(folds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, folds))
    else:
        results = [run(i) for i in folds]
    cfg.write(out / CONFIG_NAME)
    for i, h in results:
        print(f"fold {i}: final loss {h.mean_loss[-1]:.4f}  train WAR {h.train_war[-1]:.3f}")
    return 0


def _load_probe_dir(cfg: RunConfig):
    if not cfg.probes:
        raise ConfigError("config key 'probes' (train-probe output directory) is required")
    pdir = Path(cfg.probes)
    enc = Encoder(cfg.encoder_config(), np.random.default_rng(0))
    enc.load_state_dict(load_checkpoint(pdir / "encoder.vjfc"), "encoder.")
    enc.set_requires_grad(False)
    plan = FoldPlan.load(pdir / "folds.json")
    probes = {}
    for i in range(plan.k):
        path = pdir / f"probe_fold{i}.vjfc"
        if path.exists():
            probes[i] = load_probe(path)
    if not probes:
        raise FileNotFoundError(f"no probe checkpoints in {pdir}")
    return enc, plan, probes


def _write_report(out: Path, rep: MetricsReport, title: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_json(out / "metrics.json", rep)
    cm = rep.confusion_sum()
    write_confusion_csv(out / "confusion.csv", rep.classes, cm.counts)
    write_confusion_csv(out / "confusion_mean.csv", rep.classes, rep.confusion_mean())
    write_confusion_svg(out / "confusion.svg", rep.classes, rep.confusion_mean(), title)


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    records = _manifest(cfg)
    labels = dataset_labels(records)
    encoder, plan, probes = _load_probe_dir(cfg)
    verify_folds(plan, records)
    votings = _votings(cfg)
    aug = cfg.augment_config()
    per_voting = {v: [] for v in votings}
    pca_rows = {"attentive": [], "average": []}
    pca_labels = []
    for i in sorted(probes):
        probe = probes[i]
        _, val = split_records(records, plan, i)
        if not val:
            raise ProtocolError(f"fold {i} has no validation videos")
        probs = {}
        for rec in sorted(val, key=lambda r: r.id):
            clips = video_clips(rec, aug, cfg.eval_stride, cfg.frames, cfg.frame_skip)
            feats = encode_frozen(encoder, clips)
            with T.no_grad():
                flat = T.Tensor(feats.reshape(-1, feats.shape[-1]))
                pooled = probe.pool(flat, len(feats)).data
                logits = probe.head(T.Tensor(pooled)).data
            probs[rec.id] = probabilities(logits.astype(np.float64))
            pca_rows["attentive"].append(pooled.mean(axis=0))
            pca_rows["average"].append(feats.mean(axis=(0, 1)))
            pca_labels.append(rec.label)
        for v in votings:
            per_voting[v].append(confusion_from_votes(val, probs, labels, v))
    tag = records[0].dataset_tag
    for v in votings:
        rep = MetricsReport(tag, v, labels, per_voting[v])
        _write_report(out / v, rep, f"{tag} {v.upper()}")
        print(f"{v.upper():>3}: mean UAR {rep.mean_uar:.4f}  mean WAR {rep.mean_war:.4f} (std {rep.std_war:.4f})")
    for pooling, name in (("attentive", "pca.csv"), ("average", "pca_average.csv")):
        res = pca2(np.stack(pca_rows[pooling]))
        write_pca_csv(out / name, res.coords, pca_labels)
    cfg.write(out / CONFIG_NAME)
    return 0


def cmd_cross_eval(cfg: RunConfig, out: Path) -> int:
    key = "target_manifest" if cfg.target_manifest else "manifest"
    records = _manifest(cfg, key)
    encoder, plan, probes = _load_probe_dir(cfg)
    ks = {p.num_classes for p in probes.values()}
    source = L.RAVDESS if ks == {len(L.RAVDESS_LABELS)} else L.CREMAD if ks == {len(L.CREMAD_LABELS)} else None
    if source is None:
        raise ProtocolError(f"probes with {sorted(ks)} classes are neither RAVDESS- nor CREMA-D-trained")
    scorers = [model_scorer(encoder, probes[i]) for i in sorted(probes)]
    aug = cfg.augment_config()
    for mode in _modes(cfg):
        for v in _votings(cfg):
            rep = cross_evaluate(scorers, records, source, mode, v, aug, cfg.eval_stride,
                                 length=cfg.frames, skip=cfg.frame_skip)
            _write_report(out / f"{mode.value}_{v}", rep, f"{source}->{rep.dataset} {mode.value} {v.upper()}")
            print(f"{mode.value:>5} {v.upper():>3}: mean UAR {rep.mean_uar:.4f}  mean WAR {rep.mean_war:.4f}  "
                  f"dropped {rep.dropped}")
    cfg.write(out / CONFIG_NAME)
    return 0


def cmd_gradcheck(cfg: RunConfig, out: Path | None) -> int:
    results = run_all(cfg.gradcheck_seeds)
    lines = [f"{'check':<22} {'max rel err':>12}  result"]
    for r in results:
        lines.append(f"{r.name:<22} {r.max_rel_err:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    print("\n".join(lines))
    if out is not None:
        (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
        cfg.write(out / CONFIG_NAME)
    return 0 if all(r.passed for r in results) else 3


def cmd_splits_verify(cfg: RunConfig, out: Path | None) -> int:
    if cfg.manifest:
        records = _manifest(cfg)
        plan = _fold_plan(cfg, records)
    else:
        # no manifest: check the built-in plan against the 91 official CREMA-D actors
        records = [VideoRecord(f"actor{s}", "", str(s), "neutral", L.CREMAD, 0) for s in range(1001, 1092)]
        plan = cremad_table_plan()
    report = verify_folds(plan, records)
    print("\n".join(report.lines()))
    if out is not None:
        plan.save(out / "folds.json")
        cfg.write(out / CONFIG_NAME)
    return 0


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vjepa-fer", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--voting", choices=("mv", "pbv", "both"))
    parser.add_argument("--mode", choices=("drop", "merge", "both"))
    parser.add_argument("--fold", type=int)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for flag in ("seed", "voting", "mode", "fold"):
        val = getattr(args, flag)
        if val is not None:
            overrides[flag] = val
    return cfg.update(overrides)


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        with threadpool_limits(1):
            if args.command == "gen-synth":
                return cmd_gen_synth(cfg, _out_dir(args.out, create=False))
            if args.command in ("gradcheck", "splits-verify"):
                out = _out_dir(args.out) if args.out else None
                fn = cmd_gradcheck if args.command == "gradcheck" else cmd_splits_verify
                return fn(cfg, out)
            out = _out_dir(args.out)
            return {"pretrain": cmd_pretrain, "train-probe": cmd_train_probe, "eval": cmd_eval,
                    "cross-eval": cmd_cross_eval}[args.command](cfg, out)
    except VJepaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
