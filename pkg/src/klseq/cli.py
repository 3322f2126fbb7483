"""Batch command-line front end.

The CLI is a thin client of the HTTP service: by default it mounts the app
in-process through an ASGI transport, or it talks to a running server when
``--server`` is given.  Results are written as machine-readable files in the
output directory.

Exit codes: 0 success, 2 input or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import asyncio
import json
import math
import sys
from pathlib import Path
from typing import Any, Optional

import click
import httpx

from .errors import ParseError
from .io import (
    fmt_float,
    read_config_file,
    read_matrix_csv,
    read_raster_csv,
    read_series_csv,
    write_csv,
    write_json,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_SENTINEL = 1e307  # service encodes +/-inf as +/-1e308


async def _post_in_process(path: str, payload: dict) -> httpx.Response:
    from .service import app

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://service", timeout=None) as client:
        return await client.post(path, json=payload)


def _post(server: Optional[str], path: str, payload: dict) -> dict:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.post(path, json=payload)
    else:
        resp = asyncio.run(_post_in_process(path, payload))
    if resp.status_code == 200:
        return resp.json()
    detail = resp.json().get("detail", resp.text) if resp.headers.get("content-type", "").startswith("application/json") else resp.text
    if resp.status_code >= 500 or (isinstance(detail, str) and detail.startswith("numeric")):
        click.echo(f"error: {detail}", err=True)
        sys.exit(EXIT_NUMERIC)
    click.echo(f"error: {detail}", err=True)
    sys.exit(EXIT_INPUT)


def _desentinel(x: float) -> float:
    if isinstance(x, (int, float)) and abs(x) >= _SENTINEL:
        return math.copysign(math.inf, x)
    return x


def _resolve(flag: Any, config: dict[str, str], key: str, default: Any, cast) -> Any:
    """Flag value if given, else config-file value, else the default."""
    if flag is not None:
        return flag
    if key in config:
        try:
            return cast(config[key])
        except (TypeError, ValueError):
            click.echo(f"error: bad config value for {key}: {config[key]!r}", err=True)
            sys.exit(EXIT_INPUT)
    return default


def _load_config(path: Optional[str]) -> dict[str, str]:
    if path is None:
        return {}
    try:
        return read_config_file(path)
    except (ParseError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)


def _common(fn):
    fn = click.option("--alpha", type=float, default=None, help="test size in [0, 1]")(fn)
    fn = click.option("--mc-draws", type=int, default=None, help="posterior draws per null interval")(fn)
    fn = click.option("--seed", type=int, default=None, help="root seed")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None, help="output directory")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=False), default=None, help="key = value config file; flags override it")(fn)
    fn = click.option("--server", default=None, help="base URL of a running service; in-process if omitted")(fn)
    return fn


def _outdir(out: Optional[str], config: dict[str, str]) -> Path:
    path = Path(_resolve(out, config, "out", ".", str))
    path.mkdir(parents=True, exist_ok=True)
    return path


@click.group()
def main():
    """Sequential Bayesian change-point analysis tools."""


@main.command()
@click.argument("input_path", type=click.Path(exists=False))
@click.option("--model", type=click.Choice(["bernoulli", "poisson", "gaussian", "mv-gaussian"]), default=None)
@click.option("--nu", type=float, default=None, help="gaussian transfer-prior shape, > 2")
@click.option("--mu0", type=float, default=None, help="gaussian initial mean")
@click.option("--sigma0-sq", type=float, default=None, help="gaussian initial variance")
@click.option("--prior-dof", type=float, default=None, help="NIW degrees of freedom (mv-gaussian)")
@click.option("--prior-kappa", type=float, default=None, help="NIW location precision multiplier")
@click.option("--gibbs-iters", type=int, default=None)
@click.option("--gibbs-burn", type=int, default=None)
@_common
def fit(input_path, model, nu, mu0, sigma0_sq, prior_dof, prior_kappa, gibbs_iters, gibbs_burn,
        alpha, mc_draws, seed, out, config_path, server):
    """Sequential change-point fit over batched observations in a CSV file."""
    config = _load_config(config_path)
    model = _resolve(model, config, "model", "gaussian", str)
    payload: dict[str, Any] = {
        "model": model,
        "alpha": _resolve(alpha, config, "alpha", 0.05, float),
        "mc_draws": _resolve(mc_draws, config, "mc_draws", 5000, int),
        "seed": _resolve(seed, config, "seed", 0, int),
    }
    try:
        if model == "mv-gaussian":
            batches, _ = read_matrix_csv(input_path)
            payload["batches"] = [b.tolist() for b in batches]
            payload["prior_kappa"] = _resolve(prior_kappa, config, "prior_kappa", 1.0, float)
            dof = _resolve(prior_dof, config, "prior_dof", None, float)
            if dof is not None:
                payload["prior_dof"] = dof
            payload["gibbs_iters"] = _resolve(gibbs_iters, config, "gibbs_iters", 1000, int)
            payload["gibbs_burn"] = _resolve(gibbs_burn, config, "gibbs_burn", 500, int)
        else:
            batches = read_series_csv(input_path)
            payload["batches"] = [b.tolist() for b in batches]
            payload["nu"] = _resolve(nu, config, "nu", 5.0, float)
            payload["mu0"] = _resolve(mu0, config, "mu0", 0.0, float)
            payload["sigma0_sq"] = _resolve(sigma0_sq, config, "sigma0_sq", 1.0, float)
    except (ParseError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    result = _post(server, "/fit", payload)
    outdir = _outdir(out, config)
    steps = result["steps"]
    for rec in steps:
        rec["lower"] = _desentinel(rec["lower"])
        rec["upper"] = _desentinel(rec["upper"])
        if rec.get("predictive_variance") is not None:
            rec["predictive_variance"] = _desentinel(rec["predictive_variance"])
    write_json(outdir / "trace.json", {"model": model, "steps": steps, "changepoints": result["changepoints"]})
    d = len(steps[0]["mean"]) if steps else 1
    write_csv(
        outdir / "estimates.csv",
        ["step"] + [f"mean_{i + 1}" for i in range(d)] + [f"var_{i + 1}" for i in range(d)],
        [[r["step"]] + [float(v) for v in r["mean"]] + [float(v) for v in r["variance"]] for r in steps],
    )
    write_csv(
        outdir / "changepoints.csv",
        ["step", "statistic", "lower", "upper"],
        [
            [r["step"], float(r["statistic"]), float(r["lower"]), float(r["upper"])]
            for r in steps
            if r["detected"]
        ],
    )
    click.echo(f"wrote {outdir / 'trace.json'}: {len(steps)} steps, {len(result['changepoints'])} change-points")
    sys.exit(EXIT_OK)


@main.command("power-sim")
@click.option("--sims", type=int, default=None, help="number of simulations")
@click.option("--max-n", type=int, default=None, help="upper bound of the batch-size distribution")
@_common
def power_sim(sims, max_n, alpha, mc_draws, seed, out, config_path, server):
    """Bernoulli power/sample-size simulation study."""
    config = _load_config(config_path)
    payload = {
        "sims": _resolve(sims, config, "sims", 10000, int),
        "max_n": _resolve(max_n, config, "max_n", 100, int),
        "alpha": _resolve(alpha, config, "alpha", 0.2, float),
        "mc_draws": _resolve(mc_draws, config, "mc_draws", 5000, int),
        "seed": _resolve(seed, config, "seed", 0, int),
    }
    result = _post(server, "/power-sim", payload)
    outdir = _outdir(out, config)
    n = result["sims"]
    accepted = [not d for d in result["detected"]]
    z_iter = iter(result["z_values"])
    rows = []
    for i in range(n):
        n1, n2 = result["n1"][i], result["n2"][i]
        z = next(z_iter) if (accepted[i] and n1 > 1 and n2 > 1) else ""
        rows.append(
            [
                i + 1,
                n1,
                n2,
                float(result["pi"][i]),
                float(result["statistic"][i]),
                _desentinel(float(result["lower"][i])),
                _desentinel(float(result["upper"][i])),
                int(accepted[i]),
                float(z) if z != "" else "",
            ]
        )
    write_csv(outdir / "sims.csv", ["sim", "n1", "n2", "pi", "statistic", "lower", "upper", "accepted", "z"], rows)
    write_csv(
        outdir / "cdf.csv",
        ["z", "empirical", "laplace", "band_halfwidth"],
        list(
            zip(
                map(float, result["cdf_grid"]),
                map(float, result["cdf_empirical"]),
                map(float, result["cdf_laplace"]),
                map(float, result["cdf_band_halfwidth"]),
            )
        ),
    )
    write_json(
        outdir / "summary.json",
        {
            "sims": n,
            "accepted_count": result["accepted_count"],
            "acceptance_fraction": result["acceptance_rate"],
            "cdf_points_outside": result["cdf_points_outside"],
            "cdf_pass": result["cdf_pass"],
        },
    )
    click.echo(
        f"acceptance fraction {result['acceptance_rate']:.4f} "
        f"({result['accepted_count']}/{n}), cdf check {'pass' if result['cdf_pass'] else 'FAIL'}"
    )
    sys.exit(EXIT_OK)


@main.command()
@click.argument("raster_paths", type=click.Path(exists=False), nargs=-1, required=True)
@click.option("--iters", type=int, default=None, help="Metropolis iterations per trial")
@click.option("--burn", type=int, default=None)
@click.option("--thin", type=int, default=None)
@click.option("--proposal-sd", type=float, default=None)
@click.option("--prior-mean", type=float, default=None)
@click.option("--prior-sd", type=float, default=None)
@_common
def spikenet(raster_paths, iters, burn, thin, proposal_sd, prior_mean, prior_sd,
             alpha, mc_draws, seed, out, config_path, server):
    """Fit a sequence of spike-raster trials with change-point testing."""
    config = _load_config(config_path)
    try:
        rasters = [read_raster_csv(p).tolist() for p in raster_paths]
    except (ParseError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    payload = {
        "rasters": rasters,
        "alpha": _resolve(alpha, config, "alpha", 0.05, float),
        "mc_draws": _resolve(mc_draws, config, "mc_draws", 500, int),
        "seed": _resolve(seed, config, "seed", 0, int),
        "iters": _resolve(iters, config, "iters", 25000, int),
        "burn": _resolve(burn, config, "burn", 5000, int),
        "thin": _resolve(thin, config, "thin", 1, int),
        "proposal_sd": _resolve(proposal_sd, config, "proposal_sd", 0.5, float),
        "prior_mean": _resolve(prior_mean, config, "prior_mean", 0.0, float),
        "prior_sd": _resolve(prior_sd, config, "prior_sd", 1.0, float),
    }
    result = _post(server, "/spikenet", payload)
    outdir = _outdir(out, config)
    k = result["n_neurons"]
    rows = []
    for t, (means, sds) in enumerate(zip(result["coef_means"], result["coef_sds"]), start=1):
        for i in range(k):
            for j in range(k):
                rows.append([t, i + 1, j + 1, float(means[i][j]), float(sds[i][j])])
    write_csv(outdir / "coefficients.csv", ["trial", "target", "source", "mean", "sd"], rows)
    sig_rows = []
    for i in range(k):
        for j in range(k):
            sig_rows.append(
                [
                    i + 1,
                    j + 1,
                    float(result["excitatory_prop"][i][j]),
                    float(result["inhibitory_prop"][i][j]),
                ]
            )
    write_csv(outdir / "significance.csv", ["target", "source", "excitatory_prop", "inhibitory_prop"], sig_rows)
    write_csv(
        outdir / "changepoints.csv",
        ["trial", "statistic", "lower", "upper"],
        [
            [r["step"], float(r["statistic"]), _desentinel(float(r["lower"])), _desentinel(float(r["upper"]))]
            for r in result["decisions"]
            if r["detected"]
        ],
    )
    write_json(
        outdir / "trace.json",
        {
            "decisions": [
                {**r, "lower": _desentinel(r["lower"]), "upper": _desentinel(r["upper"])}
                for r in result["decisions"]
            ],
            "changepoints": result["changepoints"],
            "acceptance_rates": result["acceptance_rates"],
        },
    )
    click.echo(f"{result['n_trials']} trials, change-points at {result['changepoints']}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
