# app/cli.py
"""Command line for the balance pipeline.

simulate -> featurize -> select-features -> train -> evaluate -> benchmark -> matchmake -> report

Settings precedence: built-in defaults < --config YAML file < command-line flags.
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import orjson
import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from app.config import RunConfig, settings
from app.core.analysis import FeatureMask, significance_report
from app.core.errors import BalanceError, SchemaError
from app.core.features import (
    ProfileStore,
    feature_matrix,
    featurize_log,
    read_feature_csv,
    read_schema,
    write_feature_csv,
    write_schema,
)
from app.core.harness import benchmark as run_benchmark
from app.core.matchlog import read_matchlog, write_matchlog
from app.core.matchmaker import MatchmakerConfig, SessionLog, simulate_session
from app.core.pipeline import (
    best_subset_mask,
    build_specs,
    check_schema,
    load_features,
    run_evaluation,
    schema_for,
    split_last_days,
    wants_best_subset,
)
from app.core.predictors import BalanceThresholds, train_model
from app.core.serialization import load_model, save_model
from app.core.simworld import generate_population, run_season

logger = logging.getLogger(__name__)

app = typer.Typer(
    help=__doc__,
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)
console = Console()

LOG_FILE = "matchlog.jsonl"
FEATURES_FILE = "features.csv"
SCHEMA_FILE = "schema.json"
MASK_FILE = "best_subset.json"
MODEL_DIR = "models"

ConfigOpt = typer.Option(None, "--config", help="YAML run config; flags override its values.")
SeedOpt = typer.Option(None, "--seed", help="Root seed for every random stage.")
ModeOpt = typer.Option(None, "--mode", help="Game mode: 3v3 or 6v6.")
ThetaOpt = typer.Option(None, "--theta", help="Balance threshold on |score difference| (strict).")
OmegaOpt = typer.Option(None, "--omega", help="Win-probability band half-width (inclusive).")
GateThetaOpt = typer.Option(None, "--gate-theta", help="Matchmaking gate threshold on |predicted score diff|.")
GateOmegaOpt = typer.Option(None, "--gate-omega", help="Matchmaking gate band half-width for classifiers.")
KOpt = typer.Option(None, "--k-days", help="Days per rolling window (K >= 4).")
ModelsOpt = typer.Option(None, "--models", help="Comma-separated kinds; a trailing + uses the best subset.")
BestOpt = typer.Option(None, "--best-subset/--no-best-subset", help="Add + variants on the best feature subset.")
OutOpt = typer.Option(None, "--out", help="Output directory.")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging.")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings.log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )


@contextmanager
def diagnostics():
    """Turn domain failures into a one-line message and exit code 1."""
    try:
        yield
    except (BalanceError, FileNotFoundError) as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=1)


def _config(config: Optional[Path], **flags) -> RunConfig:
    if isinstance(flags.get("models"), str):
        flags["models"] = [m.strip() for m in flags["models"].split(",") if m.strip()]
    return RunConfig.load(config, **flags)


def _out(cfg: RunConfig) -> Path:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _features(cfg: RunConfig, log: Optional[Path]):
    """Feature frame and schema, from the featurize outputs when present."""
    out = _out(cfg)
    schema = schema_for(cfg)
    if log is None and (out / FEATURES_FILE).exists() and (out / SCHEMA_FILE).exists():
        stored = read_schema(out / SCHEMA_FILE)
        if stored.hash != schema.hash:
            raise SchemaError(f"{out / FEATURES_FILE} was built with feature schema {stored.hash[:12]}, "
                              f"the run config uses {schema.hash[:12]}")
        return read_feature_csv(out / FEATURES_FILE, schema), schema
    return load_features(log or out / LOG_FILE, schema), schema


def _mask(cfg: RunConfig, frame: pd.DataFrame, schema) -> Optional[FeatureMask]:
    if not wants_best_subset(cfg.models, cfg):
        return None
    path = cfg.out_dir / MASK_FILE
    if path.exists():
        mask = FeatureMask.read(path)
        if mask.names != schema.names:
            raise BalanceError(f"{path} was selected on a different feature schema")
        return mask
    return best_subset_mask(frame, schema, cfg)


def _table(frame: pd.DataFrame, title: str) -> Table:
    table = Table(title=title)
    for col in frame.columns:
        table.add_column(str(col), justify="right" if pd.api.types.is_numeric_dtype(frame[col]) else "left")
    for _, row in frame.iterrows():
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row])
    return table


@app.command()
def simulate(
    config: Optional[Path] = ConfigOpt,
    seed: Optional[int] = SeedOpt,
    mode: Optional[str] = ModeOpt,
    days: Optional[int] = typer.Option(None, "--days", help="Season length in days."),
    matches_per_day: Optional[int] = typer.Option(None, "--matches-per-day"),
    players: Optional[int] = typer.Option(None, "--players", help="Population size."),
    out: Optional[Path] = OutOpt,
):
    """Generate a seeded season and write it as a JSON-Lines match log."""
    with diagnostics():
        cfg = _config(config, seed=seed, mode=mode, days=days, matches_per_day=matches_per_day,
                      num_players=players, out=str(out) if out else None)
        path = _out(cfg) / LOG_FILE
        count = write_matchlog(path, run_season(cfg.population_config()))
        console.print(f"wrote {count} matches to {path}")


@app.command()
def featurize(
    config: Optional[Path] = ConfigOpt,
    log: Optional[Path] = typer.Option(None, "--log", help="Match log (default: <out>/matchlog.jsonl)."),
    out: Optional[Path] = OutOpt,
):
    """Build the leakage-free feature table of a match log."""
    with diagnostics():
        cfg = _config(config, out=str(out) if out else None)
        schema = schema_for(cfg)
        frame = load_features(log or _out(cfg) / LOG_FILE, schema)
        write_feature_csv(frame, _out(cfg) / FEATURES_FILE)
        write_schema(schema, _out(cfg) / SCHEMA_FILE)
        console.print(f"wrote {len(frame)} rows x {schema.dim} features (schema {schema.hash[:12]})")


@app.command("select-features")
def select_features(
    config: Optional[Path] = ConfigOpt,
    log: Optional[Path] = typer.Option(None, "--log"),
    keep_k: Optional[int] = typer.Option(None, "--keep-k", help="Features kept by RFE."),
    r_max: Optional[float] = typer.Option(None, "--r-max", help="Correlation pruning cutoff."),
    out: Optional[Path] = OutOpt,
    top: int = typer.Option(15, "--top", help="Significance rows to print."),
):
    """Select the best feature subset and write the significance table."""
    with diagnostics():
        cfg = _config(config, keep_k=keep_k, r_max=r_max, out=str(out) if out else None)
        frame, schema = _features(cfg, log)
        mask = best_subset_mask(frame, schema, cfg)
        mask.write(_out(cfg) / MASK_FILE)
        sig = significance_report(feature_matrix(frame, schema), frame["score_diff"].to_numpy(dtype=float),
                                  schema, cfg.r_max)
        sig.to_csv(_out(cfg) / "significance.csv", index=False)
        console.print(f"best subset ({int(mask.keep.sum())} features): {', '.join(mask.kept)}")
        console.print(_table(sig.head(top)[["feature", "coefficient", "p_value", "description"]],
                             "Most significant features (target |score diff|)"))


@app.command()
def train(
    config: Optional[Path] = ConfigOpt,
    log: Optional[Path] = typer.Option(None, "--log"),
    seed: Optional[int] = SeedOpt,
    models: Optional[str] = ModelsOpt,
    best_subset: Optional[bool] = BestOpt,
    out: Optional[Path] = OutOpt,
):
    """Fit each model on the whole log and write model files."""
    with diagnostics():
        cfg = _config(config, seed=seed, models=models, best_subset=best_subset, out=str(out) if out else None)
        frame, schema = _features(cfg, log)
        mask = _mask(cfg, frame, schema)
        X, diff = feature_matrix(frame, schema), frame["score_diff"].to_numpy(dtype=float)
        model_dir = _out(cfg) / MODEL_DIR
        for spec in build_specs(cfg.models, cfg, mask, settings.max_parallel_workers):
            model = train_model(spec.kind, X, diff, schema, mask=spec.mask, hyper=spec.hyper,
                                symmetrize_labels=spec.symmetrize, metadata={"label": spec.label})
            path = save_model(model, model_dir / f"{spec.label}.cbmf")
            console.print(f"{spec.label}: {path}")


@app.command()
def evaluate(
    config: Optional[Path] = ConfigOpt,
    log: Optional[Path] = typer.Option(None, "--log"),
    seed: Optional[int] = SeedOpt,
    mode: Optional[str] = ModeOpt,
    theta: Optional[float] = ThetaOpt,
    omega: Optional[float] = OmegaOpt,
    k_days: Optional[int] = KOpt,
    models: Optional[str] = ModelsOpt,
    best_subset: Optional[bool] = BestOpt,
    max_windows: Optional[int] = typer.Option(None, "--max-windows", help="Evaluate only the latest windows."),
    model_dir: Optional[Path] = typer.Option(None, "--model-dir", help="Check stored models against the log schema."),
    out: Optional[Path] = OutOpt,
):
    """Rolling-window F1 evaluation of each model."""
    with diagnostics():
        cfg = _config(config, seed=seed, mode=mode, theta=theta, omega=omega, k_days=k_days, models=models,
                      best_subset=best_subset, max_windows=max_windows, out=str(out) if out else None)
        frame, schema = _features(cfg, log)
        if model_dir is not None:
            check_schema([(p.name, load_model(p)) for p in sorted(Path(model_dir).glob("*.cbmf"))], schema)
        mask = FeatureMask.read(cfg.out_dir / MASK_FILE) if (cfg.out_dir / MASK_FILE).exists() else None
        if mask is not None and mask.names != schema.names:
            logger.warning("%s was selected on a different feature schema; ignoring it", MASK_FILE)
            mask = None
        report = run_evaluation(frame, schema, cfg, mask, settings.max_parallel_workers)
        csv_path, _ = report.write(_out(cfg))
        table = report.to_frame()[["model", "f1_mean", "f1_std", "train_f1_mean", "train_f1_std"]]
        console.print(_table(table, f"Test-set F1 (theta={cfg.theta:g}, omega={cfg.omega:g}, K={cfg.k_days})"))
        console.print(f"balanced base rate {report.base_rate:.3f} over {report.n_test} test matches; {csv_path}")


@app.command()
def benchmark(
    config: Optional[Path] = ConfigOpt,
    log: Optional[Path] = typer.Option(None, "--log"),
    seed: Optional[int] = SeedOpt,
    models: Optional[str] = ModelsOpt,
    repetitions: int = typer.Option(20, "--repetitions", min=1),
    test_days: int = typer.Option(1, "--test-days", min=1),
    out: Optional[Path] = OutOpt,
):
    """Training time and single-match inference latency per model."""
    with diagnostics():
        cfg = _config(config, seed=seed, models=models, out=str(out) if out else None)
        frame, schema = _features(cfg, log)
        train_rows, test_rows = split_last_days(frame, test_days)
        X = feature_matrix(frame, schema)
        diff = frame["score_diff"].to_numpy(dtype=float)
        specs = build_specs(cfg.models, cfg, _mask(cfg, frame[train_rows], schema))
        report = run_benchmark(specs, X[train_rows], diff[train_rows], schema, X[test_rows], repetitions)
        report.write(_out(cfg))
        console.print(_table(report.to_frame(), "Training and inference time (seconds)"))


@app.command()
def matchmake(
    config: Optional[Path] = ConfigOpt,
    model: Path = typer.Option(..., "--model", help="Model file used by the quality gate."),
    log: Optional[Path] = typer.Option(None, "--log", help="History used to build player profiles."),
    seed: Optional[int] = SeedOpt,
    gate_theta: Optional[float] = GateThetaOpt,
    gate_omega: Optional[float] = GateOmegaOpt,
    matches: int = typer.Option(1000, "--matches", min=1),
    max_attempts: int = typer.Option(10, "--max-attempts", min=1),
    queue_depth: int = typer.Option(120, "--queue-depth", min=0, help="Queued players before matches launch."),
    out: Optional[Path] = OutOpt,
):
    """Gated vs gate-free matchmaking on paired seeds."""
    with diagnostics():
        cfg = _config(config, seed=seed, gate_theta=gate_theta, gate_omega=gate_omega,
                      out=str(out) if out else None)
        schema = schema_for(cfg)
        gate_model = load_model(model)
        check_schema([(model.name, gate_model)], schema)

        store = ProfileStore(schema.roles, schema.actions)
        featurize_log(read_matchlog(log or _out(cfg) / LOG_FILE), schema, store=store)
        population = generate_population(cfg.population_config())
        thresholds = BalanceThresholds(theta=cfg.gate_theta, omega=cfg.gate_omega)
        mm_cfg = MatchmakerConfig(max_attempts=max_attempts)

        summary = {}
        for gated in (True, False):
            name = "gated" if gated else "gate_free"
            session_log = SessionLog(_out(cfg) / f"session_{name}.jsonl")
            result = simulate_session(population, gate_model, store, schema, matches, cfg.seed, thresholds,
                                      mm_cfg, gated=gated, log=session_log, queue_depth=queue_depth)
            session_log.write()
            summary[name] = {"matches": len(result.records), "mean_abs_score_diff": result.mean_abs_diff,
                             "fallback_rate": result.fallback_rate}
        (_out(cfg) / "session_summary.json").write_bytes(
            orjson.dumps(summary, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)
        )
        table = pd.DataFrame([{"session": k, **v} for k, v in summary.items()])
        console.print(_table(table, "Matchmaking sessions"))


@app.command()
def report(
    paths: List[Path] = typer.Argument(..., help="Report CSV or JSON files."),
):
    """Render report files as text tables."""
    with diagnostics():
        for path in paths:
            if not path.exists():
                raise FileNotFoundError(f"{path} does not exist")
            if path.suffix == ".json":
                data = orjson.loads(path.read_bytes())
                rows = data.get("models", data) if isinstance(data, dict) else data
                frame = pd.json_normalize(rows) if isinstance(rows, list) else pd.DataFrame([rows])
                if len(frame):
                    frame = frame[[c for c in frame.columns if not isinstance(frame[c].iloc[0], list)]]
            else:
                frame = pd.read_csv(path)
            console.print(_table(frame, path.name))


if __name__ == "__main__":
    app()
