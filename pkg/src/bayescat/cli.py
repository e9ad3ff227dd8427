"""Command-line entry points.

One JSON config file drives every subcommand; flags override config values.
All random seeds are explicit, so identical invocations reproduce identical
outputs (wall-clock timings aside).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click
import numpy as np

from .bank import BankGenConfig, ItemBank, generate_bank
from .harness import (
    CohortConfig,
    SessionConfig,
    SimulatedResponder,
    load_ensemble,
    make_selector,
    run_cohort,
    run_session,
    simulate_responses,
)
from .rl.train import (
    EpsilonSchedule,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)
from .selection import RULE_NAMES

SCHEMA_VERSION = 1


def _load_config(path: str | None, section: str) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    return doc.get(section, {})


def _merged(cfg: dict, **flags) -> dict:
    out = dict(cfg)
    for key, value in flags.items():
        if value is not None:
            out[key] = value
    return out


def _parse_ints(text) -> tuple[int, ...]:
    if isinstance(text, str):
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    return tuple(int(v) for v in text)


def _selector_objects(names, checkpoint: str | None, ensemble_path: str | None):
    network = load_checkpoint(checkpoint)[0] if checkpoint else None
    ensemble = load_ensemble(ensemble_path) if ensemble_path else None
    return [make_selector(name, network=network, ensemble=ensemble) for name in names]


@click.group()
def main():
    """Bayesian adaptive testing engine."""


@main.group()
def bank():
    """Item bank utilities."""


@bank.command("generate")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON config file; uses its 'bank' section.")
@click.option("--items", type=int, default=None)
@click.option("--factors", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-extra", "max_extra", type=int, default=None,
              help="Extra nonzero loadings per item beyond factor 0.")
@click.option("--out", type=click.Path(), required=True)
def bank_generate(config_path, items, factors, seed, max_extra, out):
    """Generate a synthetic multi-factor bank and write it as JSON."""
    cfg = _merged(_load_config(config_path, "bank"), items=items, factors=factors,
                  seed=seed, max_extra=max_extra)
    num_factors = int(cfg.get("factors", 1))
    gen = BankGenConfig(
        num_items=int(cfg.get("items", 50)),
        num_factors=num_factors,
        magnitude_range=tuple(cfg.get("magnitude_range", (0.3, 3.0))),
        intercept_range=tuple(cfg.get("intercept_range", (-1.5, 1.5))),
        max_extra_loadings=int(cfg.get("max_extra", min(2, num_factors - 1))),
        seed=int(cfg.get("seed", 0)),
    )
    generated = generate_bank(gen)
    generated.save(out)
    click.echo(json.dumps({"written": str(out), "num_items": generated.num_items,
                           "num_factors": generated.num_factors}))


@bank.command("inspect")
@click.argument("path", type=click.Path(exists=True))
def bank_inspect(path):
    """Print summary statistics for a stored bank."""
    b = ItemBank.load(path)
    norms = np.linalg.norm(b.loadings, axis=1)
    click.echo(json.dumps({
        "num_items": b.num_items,
        "num_factors": b.num_factors,
        "loading_norm_min": float(norms.min()),
        "loading_norm_max": float(norms.max()),
        "intercept_min": float(b.intercepts.min()),
        "intercept_max": float(b.intercepts.max()),
        "nonzero_loadings": int(np.count_nonzero(b.loadings)),
    }, indent=2))


@main.group()
def session():
    """Single-session commands."""


@session.command("run")
@click.option("--bank", "bank_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--selector", type=str, default=None)
@click.option("--tau2", type=float, default=None)
@click.option("--factors", type=str, default=None, help="Comma-separated factor indices.")
@click.option("--horizon", type=int, default=None)
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--theta", type=str, default=None,
              help="Comma-separated true trait; drawn from the prior when omitted.")
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--ensemble", "ensemble_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
def session_run(bank_path, config_path, selector, tau2, factors, horizon, samples,
                seed, theta, checkpoint, ensemble_path, out):
    """Simulate one adaptive session and print (or write) its record."""
    b = ItemBank.load(bank_path)
    cfg = _merged(_load_config(config_path, "session"), selector=selector, tau2=tau2,
                  factors=factors, horizon=horizon, sample_count=samples, seed=seed)
    scfg = SessionConfig(
        selector=str(cfg.get("selector", "mi")),
        tau2=float(cfg.get("tau2", 0.3)),
        factors=_parse_ints(cfg.get("factors", (0,))),
        horizon=int(cfg.get("horizon", min(30, b.num_items))),
        sample_count=int(cfg.get("sample_count", 2000)),
        seed=int(cfg.get("seed", 0)),
    )
    sel = _selector_objects([scfg.selector], checkpoint, ensemble_path)[0]
    if theta is not None:
        true_theta = np.array([float(tok) for tok in theta.split(",")])
    else:
        true_theta = np.random.default_rng(
            np.random.SeedSequence((scfg.seed, 1))).standard_normal((1, b.num_factors))[0]
    responses = simulate_responses(
        b, true_theta, np.random.default_rng(np.random.SeedSequence((scfg.seed, 2))))
    rec = run_session(b, sel, SimulatedResponder(responses), scfg,
                      true_theta=true_theta)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "selector": rec.selector,
        "true_theta": true_theta.tolist(),
        "items": list(rec.items),
        "responses": list(rec.responses),
        "means": rec.means.tolist(),
        "variances": rec.variances.tolist(),
        "termination_step": rec.termination_step,
        "reason": rec.reason,
        "select_seconds": list(rec.select_seconds),
    }
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text)
        click.echo(json.dumps({"written": out, "termination_step": rec.termination_step}))
    else:
        click.echo(text)


@main.group()
def cohort():
    """Cohort simulation commands."""


@cohort.command("run")
@click.option("--bank", "bank_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--selectors", type=str, default=None,
              help="Comma-separated selector ids (e.g. mi,eap_kl,random).")
@click.option("--n", type=int, default=None)
@click.option("--tau2", type=float, default=None)
@click.option("--factors", type=str, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--ensemble", "ensemble_path", type=click.Path(exists=True), default=None)
@click.option("--no-oracle", is_flag=True, default=False,
              help="Skip oracle-posterior comparison (faster).")
@click.option("--out-dir", type=click.Path(), required=True)
def cohort_run(bank_path, config_path, selectors, n, tau2, factors, horizon, samples,
               seed, checkpoint, ensemble_path, no_oracle, out_dir):
    """Run selectors head-to-head on one simulated cohort; write CSV + JSON."""
    b = ItemBank.load(bank_path)
    cfg = _merged(_load_config(config_path, "cohort"), selectors=selectors, n=n,
                  tau2=tau2, factors=factors, horizon=horizon, sample_count=samples,
                  seed=seed)
    names = cfg.get("selectors", "mi,eap_kl,max_pos,max_var,random")
    if isinstance(names, str):
        names = [tok.strip() for tok in names.split(",") if tok.strip()]
    ccfg = CohortConfig(
        tau2=float(cfg.get("tau2", 0.3)),
        factors=_parse_ints(cfg.get("factors", (0,))),
        horizon=int(cfg.get("horizon", min(30, b.num_items))),
        sample_count=int(cfg.get("sample_count", 2000)),
        seed=int(cfg.get("seed", 0)),
        reference_length=int(cfg.get("reference_length", 20)),
        mse_lengths=_parse_ints(cfg.get("mse_lengths", (10, 20, 30, 40, 50))),
        continue_past_termination=bool(cfg.get("continue_past_termination", True)),
        oracle_comparison=not no_oracle and bool(cfg.get("oracle_comparison", True)),
        workers=int(cfg.get("workers", 1)),
    )
    sels = _selector_objects(names, checkpoint, ensemble_path)
    report = run_cohort(b, sels, int(cfg.get("n", 100)), ccfg)
    report.write(out_dir)
    table = {s.name: round(s.avg_termination, 3) for s in report.selectors}
    click.echo(json.dumps({"written": str(out_dir), "avg_termination": table}))


@main.command("train")
@click.option("--bank", "bank_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--episodes", type=int, default=None)
@click.option("--tau2", type=float, default=None)
@click.option("--factors", type=str, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), required=True)
def train_cmd(bank_path, config_path, episodes, tau2, factors, horizon, seed, out_dir):
    """Train a Q-learning selection policy; write checkpoint + training log."""
    b = ItemBank.load(bank_path)
    cfg = _merged(_load_config(config_path, "train"), episodes=episodes, tau2=tau2,
                  factors=factors, horizon=horizon, seed=seed)
    eps = cfg.get("epsilon", {})
    tcfg = TrainConfig(
        factors=_parse_ints(cfg.get("factors", (0,))),
        tau2=float(cfg.get("tau2", 0.3)),
        episodes=int(cfg.get("episodes", 80_000)),
        horizon=int(cfg.get("horizon", min(60, b.num_items))),
        discount=float(cfg.get("discount", 0.95)),
        epsilon=EpsilonSchedule(float(eps.get("high", 0.99)), float(eps.get("low", 0.01)),
                                int(eps.get("decay_steps", 700_000))),
        learning_rate=float(cfg.get("learning_rate", 1e-4)),
        batch_size=int(cfg.get("batch_size", 64)),
        buffer_capacity=int(cfg.get("buffer_capacity", 200_000)),
        target_sync=int(cfg.get("target_sync", 100)),
        sample_count=int(cfg.get("sample_count", 512)),
        reward_window=int(cfg.get("reward_window", 500)),
        checkpoint_period=int(cfg.get("checkpoint_period", 1000)),
        l1=int(cfg.get("l1", 256)),
        l2=int(cfg.get("l2", 256)),
        combiner_width=int(cfg.get("combiner_width", 256)),
        seed=int(cfg.get("seed", 0)),
    )
    rng = np.random.default_rng(np.random.SeedSequence((tcfg.seed, 0)))
    result = train(b, tcfg, rng)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", result.network, result.best_episode,
                    result.best_mean_reward, train_config=tcfg)
    write_training_log(out / "training_log.csv", result.log)
    click.echo(json.dumps({
        "written": str(out),
        "episodes_run": result.episodes_run,
        "best_episode": result.best_episode,
        "best_mean_reward": result.best_mean_reward,
        "diverged": result.diverged,
    }))


@main.command("evaluate")
@click.option("--bank", "bank_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--baselines", type=str, default="mi,eap_kl,max_pos,max_var,random")
@click.option("--n", type=int, default=None)
@click.option("--tau2", type=float, default=None)
@click.option("--factors", type=str, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), required=True)
def evaluate(bank_path, checkpoint, config_path, baselines, n, tau2, factors,
             horizon, seed, out_dir):
    """Compare a trained policy against heuristic baselines on one cohort."""
    b = ItemBank.load(bank_path)
    cfg = _merged(_load_config(config_path, "evaluate"), n=n, tau2=tau2,
                  factors=factors, horizon=horizon, seed=seed)
    names = ["qlearning"] + [tok.strip() for tok in baselines.split(",") if tok.strip()]
    ccfg = CohortConfig(
        tau2=float(cfg.get("tau2", 0.3)),
        factors=_parse_ints(cfg.get("factors", (0,))),
        horizon=int(cfg.get("horizon", min(40, b.num_items))),
        sample_count=int(cfg.get("sample_count", 1000)),
        seed=int(cfg.get("seed", 0)),
        continue_past_termination=bool(cfg.get("continue_past_termination", False)),
        oracle_comparison=bool(cfg.get("oracle_comparison", False)),
        reference_length=int(cfg.get("reference_length", 20)),
    )
    sels = _selector_objects(names, checkpoint, None)
    report = run_cohort(b, sels, int(cfg.get("n", 200)), ccfg)
    report.write(out_dir)
    table = {s.name: round(s.avg_termination, 3) for s in report.selectors}
    click.echo(json.dumps({"written": str(out_dir), "avg_termination": table}))


@main.command("serve")
@click.option("--host", type=str, default=None)
@click.option("--port", type=int, default=None)
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--default-m", type=int, default=None)
def serve(host, port, data_dir, default_m):
    """Start the HTTP session service."""
    import uvicorn

    from .service import create_app

    host = host or os.environ.get("BAYESCAT_HOST", "127.0.0.1")
    port = port if port is not None else int(os.environ.get("BAYESCAT_PORT", "8000"))
    app = create_app(data_dir, default_m)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
