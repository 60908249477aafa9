"""Command-line entry point: ``ssda gen|train|eval|matrix``."""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoder as enc
from .experiment import TrialSizes, build
from .objectives import CONTRASTIVE_OBJECTIVES, LossConfig
from .sampler import BatchSpec
from .scoring import compute_eer, read_scores
from .synthdata import DomainConfig, random_shift, read_corpus, read_trials, write_corpus, write_trials
from .trainer import Corpora, TrainConfig, Trials, evaluate_checkpoint, sub_seed, train

log = logging.getLogger("ssda")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _words(text: str) -> list[str]:
    return text.replace(",", " ").split()


def _angle(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "uniform") else float(text)


_DOMAIN_KEYS = {
    "n_speakers": int, "utts_per_speaker": int, "segs_per_utt": int, "feature_dim": int,
    "speaker_spread": float, "utt_spread": float, "seg_noise": float, "speaker_rank": int,
    "n_eval_speakers": int,
}

SCHEMA = {
    "experiment": {"seed": int, "data_dir": str, "out_dir": str},
    "source": dict(_DOMAIN_KEYS),
    "target": dict(_DOMAIN_KEYS, shift_angle=_angle, shift_offset_norm=float),
    "trials": {"n_target": int, "n_nontarget": int},
    "train": {
        "regime": str, "contrastive_objective": str, "classification_objective": str, "steps": int,
        "learning_rate": float, "n_utts": int, "m_segs": int, "source_batch": int, "hidden_dims": _ints,
        "embed_dim": int, "init_checkpoint": str, "margin_m": float, "temperature_tau": float,
        "lambda_weight": float, "aam_margin_source": float, "aam_margin_target": float, "aam_scale": float,
    },
    "matrix": {"regimes": _words, "objectives": _words, "seeds": _ints},
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    data_dir: Path = Path("data")
    out_dir: Path = Path("runs")
    source: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    trials: TrialSizes = TrialSizes()
    train: dict = field(default_factory=dict)
    matrix: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def domain_configs(self, seed: int | None = None) -> tuple[DomainConfig, DomainConfig]:
        seed = self.seed if seed is None else seed
        src_kw = dict(n_speakers=200, utts_per_speaker=10, segs_per_utt=4, n_eval_speakers=40)
        src_kw.update(self.source)
        tgt_kw = dict(n_speakers=50, utts_per_speaker=8, segs_per_utt=4, n_eval_speakers=40)
        tgt_kw.update(self.target)
        angle = tgt_kw.pop("shift_angle", math.pi / 2)
        offset = tgt_kw.pop("shift_offset_norm", 3.0)
        dim = tgt_kw.get("feature_dim", 20)
        if src_kw.get("feature_dim", 20) != dim:
            raise ConfigError("source and target feature_dim must match")
        a, b = random_shift(sub_seed(seed, "data.shift"), dim, offset, angle)
        return (
            DomainConfig(seed=sub_seed(seed, "data.source"), domain="source", **src_kw),
            DomainConfig(seed=sub_seed(seed, "data.target"), domain="target", shift_matrix=a, shift_offset=b, **tgt_kw),
        )

    def train_config(self, seed: int | None = None, **overrides) -> TrainConfig:
        t = dict(self.train)
        t.update(overrides)
        batch = BatchSpec(n_utts=t.pop("n_utts", 32), m_segs=t.pop("m_segs", 2), seed=self.seed,
                          domain="joint", source_batch=t.pop("source_batch", None))
        loss_keys = ("margin_m", "temperature_tau", "lambda_weight", "aam_margin_source", "aam_margin_target", "aam_scale")
        loss = LossConfig(**{k: t.pop(k) for k in loss_keys if k in t})
        hidden = t.pop("hidden_dims", [32])
        embed = t.pop("embed_dim", 16)
        feature_dim = self.source.get("feature_dim", 20)
        ckpt = t.pop("init_checkpoint", None)
        params = None
        if isinstance(ckpt, enc.EncoderParams):
            params = ckpt
        elif ckpt:
            path = Path(ckpt)
            params = enc.load_checkpoint(path if path.is_absolute() else self.base_dir / path)
        return TrainConfig(batch=batch, loss=loss, dims=(feature_dim, *hidden, embed), init_checkpoint=params,
                           seed=self.seed if seed is None else seed, **t)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {raw!r} ({exc})") from None
    exp = values.get("experiment", {})
    base = path.parent
    cfg = ExperimentConfig(
        seed=exp.get("seed", 0),
        data_dir=base / exp.get("data_dir", "data"),
        out_dir=base / exp.get("out_dir", "runs"),
        source=values.get("source", {}),
        target=values.get("target", {}),
        trials=TrialSizes(**values.get("trials", {})),
        train=values.get("train", {}),
        matrix=values.get("matrix", {}),
        base_dir=base,
    )
    # fail on invalid values before any work
    cfg.domain_configs()
    if "init_checkpoint" in cfg.train:
        TrainConfig(**{k: v for k, v in cfg.train.items() if k in ("regime", "contrastive_objective", "classification_objective")})
    else:
        cfg.train_config()
    for obj in cfg.matrix.get("objectives", []):
        if obj not in CONTRASTIVE_OBJECTIVES:
            raise ConfigError(f"{path}: unknown objective {obj!r} in [matrix]")
    return cfg


DATA_FILES = {
    "source": "source.tsv",
    "target": "target.tsv",
    "source_trials": "source_trials.txt",
    "target_trials": "target_trials.txt",
    "manifest": "manifest.json",
}


def _build(cfg: ExperimentConfig, seed: int):
    src_cfg, tgt_cfg = cfg.domain_configs(seed)
    return build(src_cfg, tgt_cfg, cfg.trials, seed), (src_cfg, tgt_cfg)


def cmd_gen(cfg: ExperimentConfig, out_dir: Path) -> dict[str, Path]:
    (corpora, trials), (src_cfg, tgt_cfg) = _build(cfg, cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {k: out_dir / v for k, v in DATA_FILES.items()}
    for name, train_part, eval_part in (("source", corpora.source_train, corpora.source_eval),
                                        ("target", corpora.target_train, corpora.target_eval)):
        merged = type(train_part)(train_part.domain, train_part.utterances + eval_part.utterances,
                                  {**train_part._labels, **eval_part._labels})
        write_corpus(merged, paths[name], manifest=False)
    write_trials(trials.source, paths["source_trials"])
    write_trials(trials.target, paths["target_trials"])
    manifest = {
        "seed": cfg.seed,
        "sub_seeds": {k: sub_seed(cfg.seed, k) for k in ("data.source", "data.target", "data.shift",
                                                           "trials.source", "trials.target", "init", "head",
                                                           "sampler.source", "sampler.target")},
        "source": {"domain": "source", "file": DATA_FILES["source"], "config": json.loads(json.dumps(src_cfg.__dict__))},
        "target": {"domain": "target", "file": DATA_FILES["target"], "config": json.loads(json.dumps(tgt_cfg.__dict__))},
        "trials": {"n_target": cfg.trials.n_target, "n_nontarget": cfg.trials.n_nontarget},
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_data(data_dir: Path) -> tuple[Corpora, Trials]:
    paths = {k: data_dir / v for k, v in DATA_FILES.items()}
    for p in paths.values():
        if not p.exists():
            raise FileNotFoundError(f"missing data file: {p} (run `ssda gen` first)")
    src = read_corpus(paths["source"], domain="source")
    tgt = read_corpus(paths["target"], domain="target")
    corpora = Corpora(src.subset("train"), tgt.subset("train"), src.subset("eval"), tgt.subset("eval"))
    return corpora, Trials(read_trials(paths["source_trials"]), read_trials(paths["target_trials"]))


def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> tuple[str, dict]:
    corpora, trials = load_data(cfg.data_dir)
    report = train(cfg.train_config(), corpora, trials)
    paths = report.write(out_dir)
    return f"source_eer={report.source_eer:.6f} target_eer={report.target_eer:.6f}", paths


def cmd_eval(checkpoint=None, corpus=None, trials=None, scores=None) -> str:
    if scores is not None:
        return f"eer={compute_eer(read_scores(_existing(scores)))[0]:.6f}"
    if checkpoint is None or corpus is None or trials is None:
        raise ConfigError("eval needs --checkpoint, --corpus and --trials (or --scores)")
    params = enc.load_checkpoint(_existing(checkpoint))
    eer = evaluate_checkpoint(params, read_corpus(_existing(corpus)), read_trials(_existing(trials)))
    return f"eer={eer:.6f}"


MATRIX_COLUMNS = ["regime", "target_loss", "target_eer", "source_eer", "baseline_target_eer",
                  "baseline_source_eer", "per_seed_target_eer", "status"]


def run_matrix(cfg: ExperimentConfig) -> list[dict]:
    regimes = cfg.matrix.get("regimes", ["ssda", "ssda_joint"])
    objectives = cfg.matrix.get("objectives", list(CONTRASTIVE_OBJECTIVES))
    seeds = cfg.matrix.get("seeds", [cfg.seed])
    cells = {(r, o): {"target": [], "source": [], "errors": []} for r in regimes for o in objectives}
    base_t, base_s = [], []
    for seed in seeds:
        (corpora, trials), _ = _build(cfg, seed)
        base_cfg = cfg.train_config(seed=seed, regime="source_supervised", init_checkpoint=None)
        baseline = train(base_cfg, corpora, trials)
        base_t.append(baseline.target_eer)
        base_s.append(baseline.source_eer)
        for (regime, objective), cell in cells.items():
            try:
                m_segs = 2 if objective in ("contrastive", "triplet") else cfg.train.get("m_segs", 2)
                rep = train(cfg.train_config(seed=seed, regime=regime, contrastive_objective=objective,
                                             m_segs=m_segs, init_checkpoint=baseline.params), corpora, trials)
                cell["target"].append(rep.target_eer)
                cell["source"].append(rep.source_eer)
            except Exception as exc:  # recorded per cell; the grid keeps going
                cell["errors"].append(f"seed {seed}: {exc}")
            log.info("seed %s %s/%s done", seed, regime, objective)
    rows = []
    for (regime, objective), cell in cells.items():
        ok = len(cell["target"]) == len(seeds)
        rows.append({
            "regime": regime,
            "target_loss": objective,
            "target_eer": f"{np.median(cell['target']):.6f}" if ok else "",
            "source_eer": f"{np.median(cell['source']):.6f}" if ok else "",
            "baseline_target_eer": f"{np.median(base_t):.6f}",
            "baseline_source_eer": f"{np.median(base_s):.6f}",
            "per_seed_target_eer": " ".join(f"{v:.6f}" for v in cell["target"]),
            "status": "ok" if ok else "error: " + "; ".join(cell["errors"]),
        })
    return rows


def matrix_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MATRIX_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _existing(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssda", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("gen", "generate corpora and trial lists"), ("train", "train one regime"),
                        ("matrix", "run the regime x objective grid")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    p = sub.add_parser("eval", help="EER of a checkpoint on a trial list, or of a score file")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--trials", type=Path)
    p.add_argument("--scores", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "eval":
            print(cmd_eval(args.checkpoint, args.corpus, args.trials, args.scores))
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.command == "gen":
            paths = cmd_gen(cfg, args.out or cfg.data_dir)
            print(" ".join(str(p) for p in paths.values()))
        elif args.command == "train":
            line, _ = cmd_train(cfg, args.out or cfg.out_dir)
            print(line)
        elif args.command == "matrix":
            out = args.out or cfg.out_dir
            out.mkdir(parents=True, exist_ok=True)
            text = matrix_csv(run_matrix(cfg))
            (out / "matrix.csv").write_text(text, encoding="utf-8")
            sys.stdout.write(text)
        return 0
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"ssda {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
