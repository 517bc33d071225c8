"""Command-line front end: synth, extract, align, run, explain.

Every command takes an optional JSON config file (``--config``); flags given
on the command line override values from the file. Exit status is 0 on
success, 1 on a data or model error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import align, evaluation, forest, model, pipeline, ppg, synth, treeshap

logger = logging.getLogger("lonecast")


class UsageError(Exception):
    pass


def _from_section(cls, section: dict | None, name: str):
    if not section:
        return cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown {name} settings: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    return cls(**values)


@dataclasses.dataclass
class RunConfig:
    input: str | None = None
    out: str | None = None
    features: str | None = None
    windows: str | None = None
    model: str | None = None
    timezone: str = "UTC"
    candidates: tuple[int, ...] = align.CANDIDATE_WINDOWS
    quality: ppg.QualityRules = dataclasses.field(default_factory=ppg.QualityRules)
    forest: forest.ForestParams = dataclasses.field(default_factory=forest.ForestParams)
    synth: synth.SynthConfig = dataclasses.field(default_factory=synth.SynthConfig)
    top_k: int = treeshap.DEFAULT_TOP_K
    jobs: int = 1
    shuffle_labels: bool = False

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = cls()
        sections = {"quality": ppg.QualityRules, "forest": forest.ForestParams, "synth": synth.SynthConfig}
        plain = {f.name for f in dataclasses.fields(cls)} - set(sections)
        for key, value in data.items():
            if key in sections:
                try:
                    setattr(cfg, key, _from_section(sections[key], value, key))
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"bad {key} settings: {exc}") from None
            elif key in plain:
                setattr(cfg, key, tuple(value) if key == "candidates" else value)
            else:
                raise UsageError(f"unknown config key {key!r}")
        return cfg

    def extract_config(self) -> pipeline.ExtractConfig:
        return pipeline.ExtractConfig(quality=self.quality, timezone=self.timezone)


def _override(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for key in ("input", "out", "features", "windows", "model", "timezone", "top_k", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if getattr(args, "candidates", None):
        cfg.candidates = tuple(args.candidates)
    if getattr(args, "shuffle_labels", False):
        cfg.shuffle_labels = True
    fp = {k: getattr(args, a) for k, a in (("n_trees", "trees"), ("max_depth", "depth"), ("seed", "seed")) if getattr(args, a, None) is not None}
    if fp:
        cfg.forest = dataclasses.replace(cfg.forest, **fp)
    sp = {
        k: getattr(args, a)
        for k, a in (
            ("seed", "seed"),
            ("n_participants", "participants"),
            ("weeks", "weeks"),
            ("effect_strength", "effect_strength"),
            ("missing_rate", "missing_rate"),
            ("reports_per_day", "reports_per_day"),
            ("ppg_sample_rate", "ppg_sample_rate"),
            ("ppg_segments_per_day", "ppg_segments_per_day"),
            ("ppg_segment_minutes", "ppg_segment_minutes"),
        )
        if getattr(args, a, None) is not None and args.command == "synth"
    }
    if sp:
        cfg.synth = dataclasses.replace(cfg.synth, **sp)
    if cfg.out is None:
        raise UsageError("--out is required (flag or config key 'out')")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return cfg


def _need_input(cfg: RunConfig) -> Path:
    if cfg.input is None:
        raise UsageError("--input is required")
    path = Path(cfg.input)
    if not path.is_dir():
        raise UsageError(f"input directory {path} does not exist")
    return path


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    cohort, truth = synth.generate(cfg.synth)
    model.write_cohort(cohort, out)
    (out / "truth.json").write_text(truth.dumps(), encoding="utf-8")
    text, _ = synth.describe_truth(truth)
    n_ppg = len(cohort.ppg)
    print(f"participants: {len(cohort.participants)}")
    print(f"self-reports: {len(cohort.self_reports)}  ppg segments: {n_ppg}  phone events: {len(cohort.phone_events)}  location fixes: {len(cohort.location_fixes)}")
    print(text)
    return 0


def _extract(cfg: RunConfig, streams: model.CohortStreams) -> pipeline.Extraction:
    return pipeline.extract_features(streams, cfg.extract_config())


def cmd_extract(cfg: RunConfig) -> int:
    streams = model.ingest_cohort(_need_input(cfg))
    out = _out_dir(cfg)
    ext = _extract(cfg, streams)
    ext.write(out)
    counts = ext.counts()
    print(f"participants: {len(streams.participants)}")
    for k, v in counts.items():
        print(f"{k}: {v}")
    return 0


def _frame_and_labels(cfg: RunConfig):
    streams = model.ingest_cohort(_need_input(cfg))
    if not streams.self_reports:
        raise ValueError("no self-reports in input; nothing to align")
    if cfg.features:
        frame = align.FeatureFrame.read_csv(cfg.features)
    else:
        frame = _extract(cfg, streams).frame
    labels, thr = pipeline.cohort_labels(streams, cfg.timezone)
    return frame, labels, thr


def cmd_align(cfg: RunConfig) -> int:
    frame, labels, thr = _frame_and_labels(cfg)
    out = _out_dir(cfg)
    clock = model.StudyClock(cfg.timezone)
    grid = align.FeatureGrid.build(frame, labels, clock)
    chosen = align.select_windows(grid, labels, cfg.candidates)
    windows = {n: c.window for n, c in chosen.items()}
    table = align.align_and_aggregate(grid, labels, windows)
    table.write_csv(out / "aligned.csv", clock)
    table = align.impute(table, {p: np.ones(len(table.days(p)), bool) for p in table.spans})
    wins = align.build_windows(table, labels)
    align.write_windows_csv(wins, table.names, out / "windows.csv")
    info = {
        "threshold": thr,
        "note": "windows chosen on the full cohort, for inspection; the run command refits them per personal model on training rows only",
        "features": {n: {"window": c.window, "r": None if c.r != c.r else c.r, "informative": c.informative, "source": grid.sources.get(n, "")} for n, c in chosen.items()},
        "degenerate": list(table.degenerate),
    }
    (out / "windows_chosen.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    print(f"labels: {len(labels)} (median threshold {thr:g})")
    print(f"features: {len(table.names)}  windows: {len(wins)}")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    frame, labels, _ = _frame_and_labels(cfg)
    out = _out_dir(cfg)
    grid = align.FeatureGrid.build(frame, labels, model.StudyClock(cfg.timezone))
    pcfg = evaluation.ProtocolConfig(cfg.candidates, cfg.shuffle_labels, cfg.forest.seed, True, cfg.jobs)
    result = evaluation.run_protocol(grid, labels, cfg.forest, pcfg)
    result.write(out)
    if result.explanation is not None:
        treeshap.export_beeswarm(result.explanation, out / "shap_beeswarm.csv", out / "shap_summary.json", cfg.top_k)
    print(result.render())
    if result.explanation is not None:
        print("top features by mean |phi|:")
        for name in result.explanation.top(min(cfg.top_k, 10)):
            print(f"  {name}")
    return 0 if result.succeeded else 1


def cmd_explain(cfg: RunConfig) -> int:
    if cfg.windows is None:
        raise UsageError("--windows is required (a windows.csv written by align)")
    wins, names = align.read_windows_csv(cfg.windows)
    if not wins:
        raise ValueError(f"{cfg.windows} holds no windows")
    out = _out_dir(cfg)
    X, y = align.windows_matrix(wins)
    feature_names = align.window_feature_names(names)
    if cfg.model:
        m = forest.ForestModel.loads(Path(cfg.model).read_text(encoding="utf-8"))
        if m.feature_names != feature_names:
            raise ValueError("model feature names do not match the windows file")
    else:
        m = forest.fit(X, y, cfg.forest, feature_names, n_jobs=cfg.jobs)
        (out / "model.json").write_text(m.dumps(), encoding="utf-8")
    ids = [f"{w.participant}#{i}" for i, w in enumerate(wins)]
    matrix = treeshap.explain_dataset(m, X, ids, n_jobs=cfg.jobs)
    treeshap.export_beeswarm(matrix, out / "shap_beeswarm.csv", out / "shap_summary.json", cfg.top_k)
    print(f"explained {len(wins)} windows; top features by mean |phi|:")
    for name in matrix.top(min(cfg.top_k, 10)):
        print(f"  {name}")
    return 0


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "align": cmd_align, "run": cmd_run, "explain": cmd_explain}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lonecast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out", help="output directory (required)")
        if needs_input:
            p.add_argument("--input", help="cohort directory of stream files")
            p.add_argument("--timezone", help="study timezone for calendar days (default UTC)")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic cohort"), needs_input=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--participants", type=int)
    p.add_argument("--weeks", type=int)
    p.add_argument("--effect-strength", type=float)
    p.add_argument("--missing-rate", type=float)
    p.add_argument("--reports-per-day", type=int)
    p.add_argument("--ppg-sample-rate", type=float)
    p.add_argument("--ppg-segments-per-day", type=int)
    p.add_argument("--ppg-segment-minutes", type=float)

    common(sub.add_parser("extract", help="write per-module feature CSVs"))

    for name, helptext in (("align", "choose windows and write aligned tables"), ("run", "personalized protocol with SHAP export")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--features", help="features.csv from extract; skips re-extraction")
        p.add_argument("--candidates", type=int, nargs="+", help="candidate window lengths in days")
    p.add_argument("--shuffle-labels", action="store_true", help="permute labels within each participant")
    p.add_argument("--jobs", type=int, help="worker threads (results do not depend on it)")
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--top-k", type=int)

    p = sub.add_parser("explain", help="fit (or load) a forest on windows.csv and export SHAP")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--windows")
    p.add_argument("--model", help="model.json to explain instead of fitting one")
    p.add_argument("--jobs", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--top-k", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _override(RunConfig.load(args.config), args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lonecast: error: {exc}", file=sys.stderr)
        return 2
    except model.ValidationError as exc:
        print(f"lonecast: invalid input: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"lonecast: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
