"""Config files, seeded sweeps, and reproducible artifact directories.

Config format: flat ``key = value`` lines under ``[sim]``, ``[channel]``
and optional ``[sweep]`` sections, ``#`` comments.  Parsing is hand rolled
so errors carry line numbers and unknown keys are rejected.

Sweeps derive every run's seed from (master seed, axis, value, repetition)
through the counter scheme in :mod:`gossipsim.seeds`, so adding sweep
points or repetitions never changes the seeds of existing runs.  Output
files are written atomically (temp file + rename), and the summary CSV is
a pure function of the trace CSVs on disk.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import statistics
from dataclasses import dataclass, fields, replace
from pathlib import Path

from gossipsim import __version__, metrics, protocol, seeds
from gossipsim.errors import ConfigError
from gossipsim.protocol import SimulationConfig

SWEEP_AXES = ("psi", "gamma_max", "topology", "seed")
_AXIS_CODE = {"psi": 1, "gamma_max": 2, "topology": 3, "seed": 4}
_TOPOLOGY_CODE = {"cycle": 1, "complete": 2, "geometric": 3}

# section -> config key -> (attribute, parser)
_SIM_KEYS = {
    "n_agents": int, "batches": int, "step": float, "horizon": float,
    "period": float, "psi_max": int, "window": float, "seed": int,
    "lambda_compute": float, "lambda_transmit": float, "sampling_interval": int,
    "topology": str, "objective": str, "dim": int, "center_spread": float,
    "noise_std": float, "x0_value": float, "features": int,
    "samples_per_agent": int, "batch_size": int, "heterogeneity": float,
    "hidden": int, "classes": int,
}
_CHANNEL_KEYS = {
    "mode": ("channel_mode", str), "ideal_delay": ("ideal_delay", float),
    "field_radius": ("field_radius", float), "tx_power_dbm": ("tx_power_dbm", float),
    "path_loss_exp": ("path_loss_exp", float), "bandwidth_hz": ("bandwidth_hz", float),
    "noise_dbm_per_hz": ("noise_dbm_per_hz", float),
    "message_bytes": ("message_bytes", int), "gamma_max": ("gamma_max", float),
}
_SWEEP_KEYS = ("axis", "values", "repetitions", "output_dir")


@dataclass(frozen=True)
class ExperimentSpec:
    """A base config plus an optional sweep axis."""

    base: SimulationConfig
    axis: str | None = None
    values: tuple = ()
    repetitions: int = 1
    output_dir: str = "runs"

    def validate(self) -> None:
        self.base.validate()
        if self.axis is not None:
            if self.axis not in SWEEP_AXES:
                raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
            if not self.values:
                raise ConfigError("sweep values must be nonempty")
            if self.repetitions < 1:
                raise ConfigError("repetitions must be >= 1")


def _parse_value(raw: str, caster, lineno: int, key: str):
    try:
        if caster is int:
            v = int(raw)
        elif caster is float:
            v = float(raw)
        else:
            v = raw
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw!r}") from exc
    return v


def parse_config_text(text: str) -> ExperimentSpec:
    sim_kw: dict = {}
    sweep_kw: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("sim", "channel", "sweep"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, raw_val = (s.strip() for s in line.split("=", 1))
        if section == "sim":
            if key not in _SIM_KEYS:
                raise ConfigError(f"line {lineno}: unknown [sim] key {key!r}")
            if key == "lambda_transmit" and raw_val.lower() == "none":
                sim_kw[key] = None
            else:
                sim_kw[key] = _parse_value(raw_val, _SIM_KEYS[key], lineno, key)
        elif section == "channel":
            if key not in _CHANNEL_KEYS:
                raise ConfigError(f"line {lineno}: unknown [channel] key {key!r}")
            attr, caster = _CHANNEL_KEYS[key]
            sim_kw[attr] = _parse_value(raw_val, caster, lineno, key)
        else:
            if key not in _SWEEP_KEYS:
                raise ConfigError(f"line {lineno}: unknown [sweep] key {key!r}")
            if key == "values":
                sweep_kw["values"] = tuple(v.strip() for v in raw_val.split(",") if v.strip())
            elif key == "repetitions":
                sweep_kw["repetitions"] = _parse_value(raw_val, int, lineno, key)
            else:
                sweep_kw[key] = raw_val

    try:
        base = SimulationConfig(**sim_kw)
        base.validate()
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

    axis = sweep_kw.get("axis")
    values: tuple = ()
    if axis is not None:
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
        raw_values = sweep_kw.get("values", ())
        caster = {"psi": int, "gamma_max": float, "topology": str, "seed": int}[axis]
        values = tuple(caster(v) for v in raw_values)
    spec = ExperimentSpec(
        base=base, axis=axis, values=values,
        repetitions=sweep_kw.get("repetitions", 1),
        output_dir=sweep_kw.get("output_dir", "runs"),
    )
    spec.validate()
    return spec


def parse_config(path: str | Path) -> ExperimentSpec:
    return parse_config_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def serialize_config(spec: ExperimentSpec) -> str:
    """Canonical text form; parse(serialize(spec)) == spec."""
    base = spec.base
    out = ["[sim]"]
    channel_attrs = {attr for attr, _ in _CHANNEL_KEYS.values()}
    for f in fields(SimulationConfig):
        if f.name in channel_attrs or f.name == "record_deltas":
            continue
        v = getattr(base, f.name)
        out.append(f"{f.name} = {'none' if v is None else _fmt(v)}")
    out.append("")
    out.append("[channel]")
    for key, (attr, _) in _CHANNEL_KEYS.items():
        out.append(f"{key} = {_fmt(getattr(base, attr))}")
    if spec.axis is not None:
        out.append("")
        out.append("[sweep]")
        out.append(f"axis = {spec.axis}")
        out.append(f"values = {', '.join(_fmt(v) for v in spec.values)}")
        out.append(f"repetitions = {spec.repetitions}")
        out.append(f"output_dir = {spec.output_dir}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# artifacts

def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


def resolve_output_dir(spec_dir: str, override: str | None) -> Path:
    root = os.environ.get("GOSSIPSIM_OUTPUT_ROOT", "")
    target = Path(override) if override else Path(spec_dir)
    if root and not target.is_absolute():
        target = Path(root) / target
    return target


def _version_string(config_text: str) -> str:
    digest = hashlib.sha256(config_text.encode()).hexdigest()
    return f"gossipsim-{__version__}+cfg.{digest[:8]}"


def _apply_axis(base: SimulationConfig, axis: str, value) -> SimulationConfig:
    if axis == "psi":
        return replace(base, psi_max=int(value))
    if axis == "gamma_max":
        return replace(base, gamma_max=float(value))
    if axis == "topology":
        return replace(base, topology=str(value))
    if axis == "seed":
        return replace(base, seed=int(value))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _run_seed(master: int, axis: str, value, rep: int) -> int:
    if axis == "seed":
        return int(value) if rep == 0 else seeds.derive_seed(int(value), seeds.RUN, rep)
    if axis == "psi":
        key = int(value)
    elif axis == "gamma_max":
        key = seeds.float_key(float(value))
    else:
        key = _TOPOLOGY_CODE[str(value)]
    return seeds.derive_seed(master, seeds.RUN, _AXIS_CODE[axis], key, rep)


def run_single(spec: ExperimentSpec, out: str | None = None) -> Path:
    """Run the base config once; write trace, final models, summary, manifest."""
    spec.validate()
    outdir = resolve_output_dir(spec.output_dir, out)
    outdir.mkdir(parents=True, exist_ok=True)
    trace = protocol.run(spec.base)
    _atomic_write(outdir / "trace.csv", metrics.trace_csv(trace))
    _atomic_write(outdir / "final_models.csv", metrics.final_models_csv(trace))
    if spec.base.channel_mode == "wireless":
        from gossipsim import channel, seeds as seedmod
        geo = channel.place_nodes(spec.base.n_agents, spec.base.field_radius,
                                  seedmod.substream(spec.base.seed, seedmod.PLACEMENT))
        _atomic_write(outdir / "geometry.csv", channel.geometry_csv(geo))
    _atomic_write(outdir / "summary.json",
                  json.dumps(metrics.summary_dict(trace), indent=2, sort_keys=True) + "\n")
    config_text = serialize_config(spec)
    manifest = {
        "version": _version_string(config_text),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "config_text": config_text,
        "master_seed": spec.base.seed,
        "runs": [{"file": "trace.csv", "seed": spec.base.seed, "status": "ok"}],
    }
    _atomic_write(outdir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir


def _fmt_axis_value(v) -> str:
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def run_experiment(spec: ExperimentSpec, out: str | None = None) -> Path:
    """Execute a sweep: one trace CSV per (value, repetition) plus summary.

    Per-run failures are recorded in the manifest and do not stop the
    remaining runs.
    """
    spec.validate()
    if spec.axis is None:
        raise ConfigError("run_experiment needs a [sweep] section with an axis")
    outdir = resolve_output_dir(spec.output_dir, out)
    traces_dir = outdir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)

    runs = []
    files_by_value: dict[str, list[Path]] = {}
    for value in spec.values:
        label = _fmt_axis_value(value)
        files_by_value[label] = []
        for rep in range(spec.repetitions):
            run_seed = _run_seed(spec.base.seed, spec.axis, value, rep)
            cfg = replace(_apply_axis(spec.base, spec.axis, value), seed=run_seed)
            fname = f"trace_{spec.axis}={label}_rep{rep}.csv"
            entry = {"file": f"traces/{fname}", "axis_value": label, "rep": rep,
                     "seed": run_seed}
            try:
                trace = protocol.run(cfg)
            except Exception as exc:  # record and continue with the sweep
                entry["status"] = "error"
                entry["error"] = f"{type(exc).__name__}: {exc}"
            else:
                _atomic_write(traces_dir / fname, metrics.trace_csv(trace))
                entry["status"] = "ok"
                files_by_value[label].append(traces_dir / fname)
            runs.append(entry)

    summary = summarize_trace_files(spec.axis, files_by_value)
    _atomic_write(outdir / "summary.csv", summary)
    config_text = serialize_config(spec)
    manifest = {
        "version": _version_string(config_text),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "config_text": config_text,
        "master_seed": spec.base.seed,
        "axis": spec.axis,
        "runs": runs,
        "summary_file": "summary.csv",
    }
    _atomic_write(outdir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir


def read_trace_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize_trace_files(axis: str, files_by_value: dict[str, list[Path]]) -> str:
    """Aggregate final-record metrics per sweep value (medians over reps)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["axis", "value", "runs", "median_final_global_loss",
                     "median_final_mixed_grad_sq", "median_final_consensus"])
    for label, paths in files_by_value.items():
        finals = [read_trace_csv(p)[-1] for p in sorted(paths)]
        if not finals:
            writer.writerow([axis, label, 0, "nan", "nan", "nan"])
            continue
        med = lambda key: statistics.median(float(r[key]) for r in finals)
        writer.writerow([
            axis, label, len(finals),
            f"{med('global_loss'):.17g}",
            f"{med('mixed_grad_sq'):.17g}",
            f"{med('consensus'):.17g}",
        ])
    return out.getvalue()


def compare_baseline(spec: ExperimentSpec, out: str | None = None) -> dict:
    """Run the asynchronous protocol and the synchronous baseline side by side.

    Both runs share the objective, seed and step; the paired final metrics
    are written as paired.csv in the output directory.
    """
    spec.validate()
    outdir = resolve_output_dir(spec.output_dir, out)
    outdir.mkdir(parents=True, exist_ok=True)
    async_trace = protocol.run(spec.base)
    sync_trace = protocol.run_sync_baseline(spec.base)

    rows = []
    for name, trace in (("async", async_trace), ("sync", sync_trace)):
        last = trace.final_record()
        rows.append({
            "variant": name,
            "final_global_loss": last.global_loss,
            "final_mixed_grad_sq": last.mixed_grad_sq,
            "final_consensus": last.consensus,
        })
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "final_global_loss", "final_mixed_grad_sq",
                     "final_consensus"])
    for r in rows:
        writer.writerow([r["variant"], f"{r['final_global_loss']:.17g}",
                         f"{r['final_mixed_grad_sq']:.17g}",
                         f"{r['final_consensus']:.17g}"])
    _atomic_write(outdir / "paired.csv", buf.getvalue())
    _atomic_write(outdir / "async_trace.csv", metrics.trace_csv(async_trace))
    _atomic_write(outdir / "sync_trace.csv", metrics.trace_csv(sync_trace))
    return {r["variant"]: r for r in rows}
