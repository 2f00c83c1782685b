"""Command-line surface: reproducible calibrate/score/interval/simulate runs.

Every subcommand echoes its fully resolved configuration into the output
directory, takes an optional JSON config file merged *under* explicit
flags (flags win), and is byte-for-byte reproducible for a fixed seed.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import aleatoric, conformal, controller, metrics, policy, synth
from .bundle import ModelBundle, load_model_bundle, save_model_bundle
from .epistemic import EpistemicConfig, fit_epistemic
from .errors import DataError, NumericError, UqError, UsageError
from .records import FeatureStore, SplitSpec, load_records, save_records, split


def fnum(x: float) -> str:
    """Shortest round-trip decimal form, stable across runs."""
    return repr(float(x))


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # raise instead of exiting with argparse's code
        raise UsageError(message)


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON ({exc.msg})")
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


class Resolver:
    """Flag-over-config-over-default resolution with a full echo."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = vars(args)
        self.config = config
        self.resolved: dict = {}

    def get(self, key: str, default=None, cast=None):
        val = self.args.get(key)
        if val is None:
            val = self.config.get(key, default)
        if cast is not None and val is not None:
            val = cast(val)
        self.resolved[key] = val
        return val

    def echo(self, outdir: Path, subcommand: str) -> None:
        doc = {"subcommand": subcommand, **self.resolved}
        with open(outdir / "resolved_config.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _outdir(path_str: Optional[str]) -> Path:
    if not path_str:
        raise UsageError("--output is required")
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_column_csv(path: str, value_field: str, cast=float) -> dict[str, float]:
    table: dict[str, float] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "id" not in reader.fieldnames \
                    or value_field not in reader.fieldnames:
                raise DataError(
                    f"{path}: expected CSV with 'id' and '{value_field}' columns"
                )
            for row in reader:
                table[row["id"]] = cast(row[value_field])
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    except ValueError as exc:
        raise DataError(f"{path}: bad value ({exc})")
    return table


def _aligned(table: dict[str, float], store: FeatureStore, what: str) -> np.ndarray:
    vals = []
    for rec in store.records:
        if rec.id not in table:
            raise DataError(f"{what} file has no entry for record {rec.id!r}")
        vals.append(table[rec.id])
    return np.asarray(vals, dtype=float)


def _epistemic_config(res: Resolver) -> EpistemicConfig:
    layers = res.get("layer_indices", "4,9,15,21")
    if isinstance(layers, str):
        layer_indices = tuple(int(v) for v in layers.split(","))
    else:
        layer_indices = tuple(int(v) for v in layers)
    return EpistemicConfig(
        k_supp=res.get("k_supp", 100, int),
        tau=res.get("tau", 1.0, float),
        eps_supp=res.get("eps_supp", 1e-6, float),
        k_rank=res.get("k_rank", 50, int),
        layer_indices=layer_indices,
        centered_collapse=bool(res.get("centered_collapse", False)),
    )


def _score_store(bundle: ModelBundle, store: FeatureStore):
    feats = store.features
    dists = aleatoric.mahalanobis_batch(bundle.density, feats)
    sa = aleatoric.score_aleatoric_from_distance(bundle.density, dists)
    layers = [r.layer_features for r in store.records]
    se, comps = bundle.epistemic.score_batch(feats, layers)
    return dists, sa, se, comps


# ----------------------------------------------------------------- calibrate

def cmd_calibrate(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    store = load_records(_require(res.get("input"), "--input"))
    sequence = res.get("sequence")
    if sequence:
        store = store.filter_sequence(sequence)

    spec = SplitSpec(
        mode=res.get("split_mode", "by_fraction"),
        fraction=res.get("split_fraction", 0.5, float),
        seed=res.get("seed", 0, int),
    )
    cal, test = split(store, spec)

    lam = res.get("lam", aleatoric.DEFAULT_LAMBDA, float)
    epsilon = res.get("epsilon", aleatoric.DEFAULT_EPSILON, float)
    try:
        density = aleatoric.fit_density(cal, lam=lam, epsilon=epsilon)
        sigma_alea = aleatoric.score_aleatoric_batch(density, cal.features)
    except UqError as exc:
        raise type(exc)(f"aleatoric: {exc}") from exc

    epis_cfg = _epistemic_config(res)
    shifts_path = res.get("shifts")
    shift_labels = None
    if shifts_path:
        shift_labels = _aligned(
            _read_column_csv(shifts_path, "shifted", cast=lambda v: bool(int(v))),
            cal, "shifts",
        ).astype(bool)
    fixed = res.get("fixed_weights")
    fixed_weights = None
    if fixed:
        parts = [float(v) for v in str(fixed).split(",")]
        if len(parts) != 3:
            raise UsageError("--fixed-weights needs three comma-separated values")
        fixed_weights = (parts[0], parts[1], parts[2])
    try:
        epis_model, cal_comps = fit_epistemic(
            cal, epis_cfg, sigma_alea, shift_labels=shift_labels,
            fixed_weights=fixed_weights,
        )
    except UqError as exc:
        raise type(exc)(f"epistemic: {exc}") from exc
    sigma_epis = cal_comps @ np.asarray(epis_model.weights)

    if not cal.has_labels():
        raise DataError(
            "conformal: calibration records need iou labels to fit quantiles"
        )
    y = cal.conformities()
    preds_path = res.get("predictions")
    if preds_path:
        y_hat = _aligned(_read_column_csv(preds_path, "y_hat"), cal, "predictions")
        default_prediction = None
    else:
        # No point predictor supplied: fall back to the calibration mean.
        default_prediction = float(y.mean())
        y_hat = np.full(len(cal), default_prediction)

    alpha = res.get("alpha", conformal.DEFAULT_ALPHA, float)
    min_leaf_n = res.get("min_leaf_n", conformal.DEFAULT_MIN_LEAF, int)
    try:
        calib = conformal.fit_calibration(
            cal.features, y, y_hat, sigma_alea, sigma_epis,
            alpha=alpha, min_leaf_n=min_leaf_n, eps=epsilon,
        )
    except UqError as exc:
        raise type(exc)(f"conformal: {exc}") from exc

    bundle = ModelBundle(density=density, epistemic=epis_model, calibration=calib)
    save_model_bundle(bundle, out / "bundle.json")
    save_records(cal, out / "calibration.jsonl")
    save_records(test, out / "test.jsonl")

    try:
        orth = metrics.pearson(sigma_alea, sigma_epis)
    except DataError:
        orth = None
    report = {
        "n_cal": len(cal),
        "n_test": len(test),
        "alpha": alpha,
        "lambda": lam,
        "weights": list(epis_model.weights),
        "q_global": calib.q_global,
        "n_leaves": len(calib.leaf_quantiles),
        "n_fallback_leaves": sum(
            1 for lq in calib.leaf_quantiles.values() if lq.fallback
        ),
        "m_min": density.m_min,
        "m_max": density.m_max,
        "supp_norm": list(epis_model.supp_norm),
        "default_prediction": default_prediction,
        "cal_orthogonality": orth,
    }
    with open(out / "fit_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    res.echo(out, "calibrate")
    return 0


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _load_bundle(res: Resolver) -> ModelBundle:
    bundle_path = _require(res.get("bundle"), "--bundle")
    cal_path = _require(res.get("calibration"), "--calibration")
    cal_store = load_records(cal_path)
    return load_model_bundle(bundle_path, cal_store)


# --------------------------------------------------------------------- score

def cmd_score(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    bundle = _load_bundle(res)
    store = load_records(_require(res.get("input"), "--input"))
    dists, sa, se, comps = _score_store(bundle, store)
    with open(out / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "sequence", "frame", "mahalanobis", "sigma_alea",
             "eps_supp", "eps_rank", "eps_grad", "sigma_epis"]
        )
        for i, rec in enumerate(store.records):
            writer.writerow(
                [rec.id, rec.sequence, rec.frame, fnum(dists[i]), fnum(sa[i]),
                 fnum(comps[i, 0]), fnum(comps[i, 1]), fnum(comps[i, 2]),
                 fnum(se[i])]
            )
    res.echo(out, "score")
    return 0


# ----------------------------------------------------------------- intervals

def cmd_intervals(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    bundle = _load_bundle(res)
    store = load_records(_require(res.get("input"), "--input"))
    preds_path = res.get("predictions")
    const_pred = res.get("constant_prediction", cast=float)
    if preds_path:
        y_hat = _aligned(_read_column_csv(preds_path, "y_hat"), store, "predictions")
    elif const_pred is not None:
        y_hat = np.full(len(store), const_pred)
    else:
        raise UsageError("either --predictions or --constant-prediction is required")
    _, sa, se, _ = _score_store(bundle, store)
    with open(out / "intervals.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "y_hat", "sigma_alea", "sigma_epis", "q_used", "leaf_id",
             "lo", "hi", "width", "lo_clamped", "hi_clamped", "width_clamped"]
        )
        for i, rec in enumerate(store.records):
            band = conformal.predict_interval(
                bundle.calibration, rec.feature, float(y_hat[i]),
                float(sa[i]), float(se[i]),
            )
            lo_c, hi_c = max(band.lo, 0.0), min(band.hi, 1.0)
            writer.writerow(
                [rec.id, fnum(y_hat[i]), fnum(sa[i]), fnum(se[i]),
                 fnum(band.q_used), band.leaf_id, fnum(band.lo), fnum(band.hi),
                 fnum(band.width), fnum(lo_c), fnum(hi_c),
                 fnum(max(hi_c - lo_c, 0.0))]
            )
    res.echo(out, "intervals")
    return 0


# ------------------------------------------------------------------ simulate

def _trace_arg(res: Resolver):
    path = res.get("trace") or res.get("input")
    return _require(path, "--trace/--input")


def cmd_simulate(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    frames = policy.load_trace(_trace_arg(res))
    policy_path = res.get("policy")
    actions = policy.ActionSet(kappa=res.get("kappa", 0.2, float))

    if policy_path:
        net, _ = policy.load_checkpoint(policy_path)
        result = policy.run_policy(
            net, frames, greedy=bool(res.get("greedy", True)),
            seed=res.get("seed", 0, int), actions=actions,
        )
        mode = "policy"
        decisions_rows = [
            [result.frames[i], fnum(result.sigma_alea[i]),
             fnum(result.sigma_epis[i]), "", actions.names[result.actions[i]]]
            for i in range(len(result.actions))
        ]
        extra: dict = {}
    else:
        rate = res.get("target_escalation_rate", cast=float)
        if rate is not None:
            sa = np.array([f.sigma_alea for f in frames])
            se = np.array([f.sigma_epis for f in frames])
            cfg = controller.calibrate_thresholds(sa, se, rate)
        else:
            cfg = controller.ControllerConfig(
                tau_alea=res.get("tau_alea", controller.DEFAULT_TAU_ALEA, float),
                tau_epis=res.get("tau_epis", controller.DEFAULT_TAU_EPIS, float),
            )
        seqs, frame_ids, chosen, ious = [], [], [], []
        sig_a, sig_e, regimes = [], [], []
        switches = 0
        prev_action: Optional[int] = None
        prev_seq: Optional[str] = None
        for fr in frames:
            d = controller.decide(fr.sigma_alea, fr.sigma_epis, cfg)
            action = len(actions.names) - 1 if d.action == "escalate" else 0
            name = actions.names[action]
            if name not in fr.per_model:
                raise DataError(
                    f"trace frame {fr.sequence}:{fr.frame} is missing the "
                    f"{name!r} model column"
                )
            if fr.sequence != prev_seq:
                prev_action = None
                prev_seq = fr.sequence
            if prev_action is not None and action != prev_action:
                switches += 1
            prev_action = action
            seqs.append(fr.sequence)
            frame_ids.append(fr.frame)
            chosen.append(action)
            ious.append(fr.per_model[name]["iou"])
            sig_a.append(fr.sigma_alea)
            sig_e.append(fr.sigma_epis)
            regimes.append(d.regime)
        result = policy.SimulationResult(
            sequences=seqs, frames=frame_ids, actions=chosen, ious=ious,
            sigma_alea=sig_a, sigma_epis=sig_e, switch_count=switches,
            mean_active_params=float(
                np.mean([actions.params[a] for a in chosen])
            ),
            mean_iou=float(np.mean(ious)),
            action_set=actions,
        )
        mode = "thresholds"
        decisions_rows = [
            [frame_ids[i], fnum(sig_a[i]), fnum(sig_e[i]), regimes[i],
             actions.names[chosen[i]]]
            for i in range(len(chosen))
        ]
        extra = {
            "tau_alea": cfg.tau_alea,
            "tau_epis": cfg.tau_epis,
            "escalation_rate": float(np.mean(
                [1.0 if r == "epis_dominant" else 0.0 for r in regimes]
            )),
        }

    with open(out / "decisions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "sigma_alea", "sigma_epis", "regime", "action"])
        writer.writerows(decisions_rows)

    n_eps = len({s for s in result.sequences})
    savings = metrics.compute_savings(result)
    xlarge_iou = float(np.mean(
        [f.per_model[actions.names[-1]]["iou"] for f in frames]
    ))
    doc = {
        "mode": mode,
        "n_frames": len(result.actions),
        "compute_savings": savings,
        "switch_count": result.switch_count,
        "switch_rate": result.switch_count / max(1, len(result.actions) - n_eps),
        "mean_iou": result.mean_iou,
        "mean_active_params": result.mean_active_params,
        "always_xlarge_mean_iou": xlarge_iou,
        "mean_iou_drop_vs_xlarge": xlarge_iou - result.mean_iou,
        **extra,
    }
    with open(out / "simulation.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    res.echo(out, "simulate")
    return 0


# -------------------------------------------------------------- train-policy

def cmd_train_policy(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    frames = policy.load_trace(_trace_arg(res))
    train_cfg = policy.TrainConfig(
        lr=res.get("lr", 1e-4, float),
        batch=res.get("batch", 64, int),
        gamma=res.get("gamma", 0.99, float),
        target_sync=res.get("target_sync", 100, int),
        replay_capacity=res.get("replay_capacity", 50_000, int),
        eps_start=res.get("eps_start", 1.0, float),
        eps_end=res.get("eps_end", 0.05, float),
        eps_decay_steps=res.get("eps_decay_steps", 10_000, int),
        steps=res.get("steps", 15_000, int),
        seed=res.get("seed", 0, int),
    )
    reward_cfg = policy.RewardConfig(
        lambda_epis=res.get("lambda_epis", 0.2, float),
        lambda_alea=res.get("lambda_alea", 0.2, float),
        tau_epis=res.get("tau_epis", 0.6, float),
        tau_alea=res.get("tau_alea", 0.5, float),
        kappa=res.get("kappa", 0.2, float),
        gated_bonus=bool(res.get("gated_bonus", False)),
    )
    trained = policy.train_policy(frames, train_cfg, reward_cfg)
    policy.save_checkpoint(trained.net, train_cfg, reward_cfg, out / "policy.json")
    with open(out / "train_log.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "mean_q", "epsilon"])
        for step, loss, mean_q, eps in trained.log_rows:
            writer.writerow([step, fnum(loss), fnum(mean_q), fnum(eps)])
    res.echo(out, "train-policy")
    return 0


# -------------------------------------------------------------------- report

def cmd_report(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    n_bins = res.get("bins", 10, int)
    alpha = res.get("alpha", conformal.DEFAULT_ALPHA, float)
    model_id = res.get("model_id", "unknown")

    report = metrics.MetricsReport()
    store = None
    store_path = res.get("store")
    if store_path:
        store = load_records(store_path)

    scores_path = res.get("scores")
    if scores_path:
        rows = _read_csv_rows(scores_path)
        sa = np.array([float(r["sigma_alea"]) for r in rows])
        se = np.array([float(r["sigma_epis"]) for r in rows])
        report.pearson_alea_epis = metrics.pearson(sa, se)
        if store is not None and store.has_labels():
            y_by_id = {rec.id: rec.conformity() for rec in store.records}
            pairs = [(float(r["sigma_alea"]), y_by_id[r["id"]])
                     for r in rows if r["id"] in y_by_id]
            if len(pairs) >= 2:
                xs = np.array([p[0] for p in pairs])
                ys = np.array([p[1] for p in pairs])
                report.pearson_alea_conformity = metrics.pearson(xs, ys)
                report.per_bin_conformity = metrics.binned_mean(xs, ys, n_bins)

    intervals_path = res.get("intervals")
    if intervals_path and store is not None and store.has_labels():
        rows = _read_csv_rows(intervals_path)
        y_by_id = {rec.id: rec.conformity() for rec in store.records}
        hits, widths, n = 0, [], 0
        for r in rows:
            if r["id"] not in y_by_id:
                raise DataError(f"interval row for unknown record {r['id']!r}")
            y = y_by_id[r["id"]]
            lo, hi = float(r["lo"]), float(r["hi"])
            hits += 1 if lo <= y <= hi else 0
            widths.append(hi - lo)
            n += 1
        report.coverage = hits / n if n else None
        report.mean_width = float(np.mean(widths)) if widths else None
        with open(out / "coverage.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model_id", "alpha", "coverage", "mean_width",
                             "n_test"])
            writer.writerow([model_id, fnum(alpha), fnum(report.coverage),
                             fnum(report.mean_width), n])

    sim_path = res.get("simulation")
    if sim_path:
        with open(sim_path, "r", encoding="utf-8") as fh:
            sim = json.load(fh)
        report.compute_savings = sim.get("compute_savings")
        report.switch_rate = sim.get("switch_rate")

    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if report.per_bin_conformity:
        with open(out / "bins.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "mean_conformity", "count"])
            for b in report.per_bin_conformity:
                writer.writerow(
                    [fnum(b.center),
                     fnum(b.mean) if b.mean is not None else "", b.count]
                )
    res.echo(out, "report")
    return 0


def _read_csv_rows(path: str) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")


# ----------------------------------------------------------------- gen-synth

def cmd_gen_synth(args: argparse.Namespace) -> int:
    res = Resolver(args, _load_config(args.config))
    out = _outdir(res.get("output"))
    k = res.get("n_clusters", 2, int)
    sep = res.get("cluster_sep", 4.0, float)
    d = res.get("d", 8, int)
    means = []
    for i in range(k):
        mu = [0.0] * d
        mu[0] = (i - (k - 1) / 2.0) * sep
        means.append(tuple(mu))

    def _tuple_arg(key, default):
        val = res.get(key)
        if val is None:
            return tuple([default] * k)
        if isinstance(val, str):
            return tuple(float(v) for v in val.split(","))
        return tuple(float(v) for v in val)

    cfg = synth.SynthConfig(
        n=res.get("n", 1000, int),
        d=d,
        means=tuple(means),
        cov_scales=_tuple_arg("cov_scales", 1.0),
        weights=tuple([1.0 / k] * k),
        base_y=_tuple_arg("base_y", 0.4),
        noise_scales=_tuple_arg("noise_scales", 0.05),
        displacement_coupling=res.get("displacement_coupling", 0.0, float),
        shift_fraction=res.get("shift_fraction", 0.0, float),
        shift_offset=res.get("shift_offset", 0.0, float),
        layer_count=res.get("layer_count", 4, int),
        layer_angle=res.get("layer_angle", 0.15, float),
        layer_noise=res.get("layer_noise", 0.05, float),
        track_size=res.get("track_size", 10, int),
        seed=res.get("seed", 0, int),
    )
    result = synth.generate_synth(cfg)
    save_records(result.store, out / "store.jsonl")
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "y_hat"])
        for rec, yh in zip(result.store.records, result.y_hat):
            writer.writerow([rec.id, fnum(yh)])
    with open(out / "shifts.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "shifted"])
        for rec, sh in zip(result.store.records, result.shifted):
            writer.writerow([rec.id, int(sh)])
    res.echo(out, "gen-synth")
    return 0


# ---------------------------------------------------------------------- main

def build_parser() -> _Parser:
    parser = _Parser(prog="uqgate", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config merged under flags")
        p.add_argument("--output", help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("calibrate", help="fit density, combination, and quantiles")
    common(p)
    p.add_argument("--input", help="record store (JSONL)")
    p.add_argument("--sequence", help="restrict the fit to one sequence")
    p.add_argument("--split-mode", dest="split_mode",
                   choices=["by_fraction", "by_track_identity"], default=None)
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--min-leaf-n", dest="min_leaf_n", type=int, default=None)
    p.add_argument("--k-supp", dest="k_supp", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--eps-supp", dest="eps_supp", type=float, default=None)
    p.add_argument("--k-rank", dest="k_rank", type=int, default=None)
    p.add_argument("--layer-indices", dest="layer_indices", default=None)
    p.add_argument("--predictions", help="CSV id,y_hat used for residuals")
    p.add_argument("--shifts", help="CSV id,shifted for weight separation")
    p.add_argument("--fixed-weights", dest="fixed_weights",
                   help="skip optimization; comma-separated w_supp,w_rank,w_grad")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score records under a fitted bundle")
    common(p)
    p.add_argument("--bundle", help="bundle.json from calibrate")
    p.add_argument("--calibration", help="calibration store used to rebuild "
                                         "the neighbor index")
    p.add_argument("--input", help="record store to score")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("intervals", help="emit prediction intervals")
    common(p)
    p.add_argument("--bundle")
    p.add_argument("--calibration")
    p.add_argument("--input")
    p.add_argument("--predictions")
    p.add_argument("--constant-prediction", dest="constant_prediction",
                   type=float, default=None)
    p.set_defaults(func=cmd_intervals)

    p = sub.add_parser("simulate", help="replay a trace under a policy or "
                                        "thresholds")
    common(p)
    p.add_argument("--trace")
    p.add_argument("--input", help="alias for --trace")
    p.add_argument("--policy", help="policy checkpoint; omit for thresholds")
    p.add_argument("--greedy", action="store_true", default=None)
    p.add_argument("--tau-alea", dest="tau_alea", type=float, default=None)
    p.add_argument("--tau-epis", dest="tau_epis", type=float, default=None)
    p.add_argument("--target-escalation-rate", dest="target_escalation_rate",
                   type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-policy", help="train the selection policy "
                                            "offline from a trace")
    common(p)
    p.add_argument("--trace")
    p.add_argument("--input", help="alias for --trace")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--target-sync", dest="target_sync", type=int, default=None)
    p.add_argument("--replay-capacity", dest="replay_capacity", type=int,
                   default=None)
    p.add_argument("--eps-start", dest="eps_start", type=float, default=None)
    p.add_argument("--eps-end", dest="eps_end", type=float, default=None)
    p.add_argument("--eps-decay-steps", dest="eps_decay_steps", type=int,
                   default=None)
    p.add_argument("--lambda-epis", dest="lambda_epis", type=float, default=None)
    p.add_argument("--lambda-alea", dest="lambda_alea", type=float, default=None)
    p.add_argument("--tau-epis", dest="tau_epis", type=float, default=None)
    p.add_argument("--tau-alea", dest="tau_alea", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--gated-bonus", dest="gated_bonus", action="store_true",
                   default=None)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("report", help="assemble metrics from run outputs")
    common(p)
    p.add_argument("--scores", help="scores.csv from the score subcommand")
    p.add_argument("--store", help="record store with iou labels")
    p.add_argument("--intervals", help="intervals.csv")
    p.add_argument("--simulation", help="simulation.json")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--model-id", dest="model_id", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-synth", help="write a synthetic record store")
    common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n-clusters", dest="n_clusters", type=int, default=None)
    p.add_argument("--cluster-sep", dest="cluster_sep", type=float, default=None)
    p.add_argument("--cov-scales", dest="cov_scales", default=None)
    p.add_argument("--base-y", dest="base_y", default=None)
    p.add_argument("--noise-scales", dest="noise_scales", default=None)
    p.add_argument("--displacement-coupling", dest="displacement_coupling",
                   type=float, default=None)
    p.add_argument("--shift-fraction", dest="shift_fraction", type=float,
                   default=None)
    p.add_argument("--shift-offset", dest="shift_offset", type=float,
                   default=None)
    p.add_argument("--layer-count", dest="layer_count", type=int, default=None)
    p.add_argument("--layer-angle", dest="layer_angle", type=float, default=None)
    p.add_argument("--layer-noise", dest="layer_noise", type=float, default=None)
    p.add_argument("--track-size", dest="track_size", type=int, default=None)
    p.set_defaults(func=cmd_gen_synth)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
