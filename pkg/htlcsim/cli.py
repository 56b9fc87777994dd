"""Console commands of the three phases: ``generate``, ``simulate``, ``analyze``, and ``run``.

Every option defaults to ``None``, meaning "not given": its value is then
taken from ``--config``, then from the ``--defaults-from`` preset, then from
the builtin defaults (see ``htlcsim.configs``).
"""

import multiprocessing as mp
import os
import sys
from typing import Mapping, Optional

import argh

from htlcsim import (
    PAYMENTS_FILE,
    RAW_PAYMENT_DATA_FILE,
    STATISTICS_FILE,
    engine,
    io,
    netgen,
    stats,
)
from htlcsim.configs import generation_params_from, resolve_configs, sim_config_from
from htlcsim.util import ensure_dir, format_table, mk_conditional_logger

# (field of SimStatistics, label of the summary table, format of its numbers)
summary_measures = (
    ("p_success", "P(success)", ".4f"),
    ("p_fail_no_route", "P(fail: no route)", ".4f"),
    ("p_fail_unbalanced", "P(fail: unbalanced)", ".4f"),
    ("p_fail_uncooperative", "P(fail: uncooperative)", ".4f"),
    ("p_fail_timeout", "P(fail: timeout)", ".4f"),
    ("p_unknown", "P(unknown)", ".4f"),
    ("payment_time", "payment time (ms)", ".1f"),
    ("attempts", "attempts", ".3f"),
    ("route_length", "route length", ".3f"),
)


# ------------------------------------------------------------------- phases


def _generate(configs: Mapping, out_dir: str, verbose=False):
    _clog = mk_conditional_logger(verbose, print)
    params = generation_params_from(configs)
    network, payments = netgen.generate(params, verbose=verbose)
    out_dir = ensure_dir(out_dir, verbose=verbose)
    io.write_network(network, out_dir)
    io.write_payments(payments, os.path.join(out_dir, PAYMENTS_FILE))
    _clog(f"wrote network and payment script to {out_dir}")
    return out_dir


def _simulate(configs: Mapping, in_dir: str, out_dir: str, verbose=False):
    _clog = mk_conditional_logger(verbose, print)
    network = io.read_network(in_dir)
    payments = io.read_payments(
        os.path.join(in_dir, PAYMENTS_FILE), peer_ids=set(network.peers)
    )
    _clog(
        f"read {len(network.peers)} peers, {len(network.channels)} channels "
        f"and {len(payments)} payments from {in_dir}"
    )
    records = engine.run(network, payments, sim_config_from(configs), verbose=verbose)
    out_dir = ensure_dir(out_dir, verbose=verbose)
    filepath = os.path.join(out_dir, RAW_PAYMENT_DATA_FILE)
    io.write_raw_payment_data(records, filepath)
    _clog(f"wrote {filepath}")
    return records


def _analyze(configs: Mapping, in_dir: str, out_dir: str, verbose=False):
    _clog = mk_conditional_logger(verbose, print)
    records = io.read_raw_payment_data(os.path.join(in_dir, RAW_PAYMENT_DATA_FILE))
    statistics = stats.batch_means(
        records,
        configs["batches"],
        configs["warmup_batches"],
        attempts_over=configs["attempts_over"],
    )
    out_dir = ensure_dir(out_dir, verbose=verbose)
    filepath = os.path.join(out_dir, STATISTICS_FILE)
    io.write_statistics(statistics, filepath, config=configs)
    _clog(f"wrote {filepath}")
    return statistics


def _run_phases(configs: Mapping, out_dir: str, verbose=False) -> stats.SimStatistics:
    out_dir = _generate(configs, out_dir, verbose)
    _simulate(configs, out_dir, out_dir, verbose)
    return _analyze(configs, out_dir, out_dir, verbose)


def summary_table(statistics: stats.SimStatistics) -> str:
    rows = []
    for name, label, fmt in summary_measures:
        m = getattr(statistics, name)
        rows.append(
            (label, format(m.mean, fmt), format(m.ci95_low, fmt), format(m.ci95_high, fmt))
        )
    return format_table(rows, ("measure", "mean", "ci95_low", "ci95_high"))


# ----------------------------------------------------------------- commands


@argh.arg("--out-dir", "--out", help="Directory to write the csv files to")
def generate(
    *,
    out_dir: str = ".",
    config: Optional[str] = None,
    defaults_from: Optional[str] = None,
    verbose: bool = False,
    seed=None,
    peers=None,
    avg_channels=None,
    sigma_topology=None,
    avg_capacity=None,
    gini=None,
    payment_rate=None,
    n_payments=None,
    sigma_amount=None,
    same_recipient_fraction=None,
):
    """Generate a random network and payment script (peers, channels, endpoints and payments csvs).

    :param out_dir: Directory to write the csv files to
    :param config: A ``key = value`` file of options
    :param defaults_from: Name of a preset of htlcsim_configs.json to take defaults from
    :param verbose: Print what is being done
    """
    explicit = dict(
        seed=seed,
        peers=peers,
        avg_channels=avg_channels,
        sigma_topology=sigma_topology,
        avg_capacity=avg_capacity,
        gini=gini,
        payment_rate=payment_rate,
        n_payments=n_payments,
        sigma_amount=sigma_amount,
        same_recipient_fraction=same_recipient_fraction,
    )
    configs = resolve_configs(explicit, config, defaults_from)
    _generate(configs, out_dir, verbose)


@argh.arg("--in-dir", "--in", help="Directory holding the network and payment csvs")
@argh.arg("--out-dir", "--out", help="Directory to write to (defaults to --in)")
def simulate(
    *,
    in_dir: str = ".",
    out_dir: Optional[str] = None,
    config: Optional[str] = None,
    defaults_from: Optional[str] = None,
    verbose: bool = False,
    seed=None,
    p_uncoop_before=None,
    p_uncoop_after=None,
    latency_min=None,
    latency_max=None,
    processing_latency=None,
    timeout_ms=None,
    block_interval_ms=None,
    validity_window_ms=None,
    final_timelock=None,
    fee_weight=None,
    timelock_weight=None,
):
    """Execute the payments of a directory and write raw-per-payment-data.csv."""
    explicit = dict(
        seed=seed,
        p_uncoop_before=p_uncoop_before,
        p_uncoop_after=p_uncoop_after,
        latency_min=latency_min,
        latency_max=latency_max,
        processing_latency=processing_latency,
        timeout_ms=timeout_ms,
        block_interval_ms=block_interval_ms,
        validity_window_ms=validity_window_ms,
        final_timelock=final_timelock,
        fee_weight=fee_weight,
        timelock_weight=timelock_weight,
    )
    configs = resolve_configs(explicit, config, defaults_from)
    _simulate(configs, in_dir, out_dir or in_dir, verbose)


@argh.arg("--in-dir", "--in", help="Directory holding raw-per-payment-data.csv")
@argh.arg("--out-dir", "--out", help="Directory to write to (defaults to --in)")
def analyze(
    *,
    in_dir: str = ".",
    out_dir: Optional[str] = None,
    config: Optional[str] = None,
    defaults_from: Optional[str] = None,
    verbose: bool = False,
    batches=None,
    warmup_batches=None,
    attempts_over=None,
):
    """Compute the payment measures by batch means and write payments-statistics.json.

    :param attempts_over: 'all' (every payment) or 'success' (successful payments only)
    """
    explicit = dict(
        batches=batches, warmup_batches=warmup_batches, attempts_over=attempts_over
    )
    configs = resolve_configs(explicit, config, defaults_from)
    _analyze(configs, in_dir, out_dir or in_dir, verbose)


@argh.arg("--out-dir", "--out", help="Directory to write all files to")
def run(
    *,
    out_dir: str = ".",
    runs: int = 1,
    config: Optional[str] = None,
    defaults_from: Optional[str] = None,
    verbose: bool = False,
    seed=None,
    peers=None,
    avg_channels=None,
    sigma_topology=None,
    p_uncoop_before=None,
    p_uncoop_after=None,
    avg_capacity=None,
    gini=None,
    payment_rate=None,
    n_payments=None,
    sigma_amount=None,
    same_recipient_fraction=None,
    latency_min=None,
    latency_max=None,
    processing_latency=None,
    timeout_ms=None,
    block_interval_ms=None,
    validity_window_ms=None,
    final_timelock=None,
    fee_weight=None,
    timelock_weight=None,
    batches=None,
    warmup_batches=None,
    attempts_over=None,
):
    """Generate, simulate and analyze in one go, and print a summary of the measures.

    With ``--runs N`` (N > 1), N replicas with seeds ``seed, ..., seed + N - 1``
    run in parallel, each in its own ``run-<r>`` sub-directory of ``--out``.
    """
    explicit = dict(
        seed=seed,
        peers=peers,
        avg_channels=avg_channels,
        sigma_topology=sigma_topology,
        p_uncoop_before=p_uncoop_before,
        p_uncoop_after=p_uncoop_after,
        avg_capacity=avg_capacity,
        gini=gini,
        payment_rate=payment_rate,
        n_payments=n_payments,
        sigma_amount=sigma_amount,
        same_recipient_fraction=same_recipient_fraction,
        latency_min=latency_min,
        latency_max=latency_max,
        processing_latency=processing_latency,
        timeout_ms=timeout_ms,
        block_interval_ms=block_interval_ms,
        validity_window_ms=validity_window_ms,
        final_timelock=final_timelock,
        fee_weight=fee_weight,
        timelock_weight=timelock_weight,
        batches=batches,
        warmup_batches=warmup_batches,
        attempts_over=attempts_over,
    )
    configs = resolve_configs(explicit, config, defaults_from)
    runs = int(runs)
    if runs < 1:
        raise ValueError(f"--runs must be at least 1, was {runs}")
    if runs == 1:
        return summary_table(_run_phases(configs, out_dir, verbose))

    work = [
        (
            dict(configs, seed=configs["seed"] + r),
            os.path.join(out_dir, f"run-{r}"),
            verbose,
        )
        for r in range(runs)
    ]
    with mp.Pool(processes=min(runs, os.cpu_count() or 1)) as pool:
        results = pool.starmap(_run_phases, work)
    return "\n\n".join(
        f"run-{r} (seed {configs['seed'] + r})\n{summary_table(statistics)}"
        for r, statistics in enumerate(results)
    )


argh_kwargs = {
    "functions": [generate, simulate, analyze, run],
}


def main(argv=None):
    parser = argh.ArghParser(prog="htlcsim")
    parser.add_commands(argh_kwargs["functions"])
    try:
        parser.dispatch(argv=argv, output_file=sys.stdout)
    except (ValueError, OSError) as e:
        print(f"htlcsim: error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
