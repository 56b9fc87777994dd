"""
HTLC payment network simulator
------------------------------

Three phases, each available as a console command:

::

    htlcsim generate --out net/      # peers, channels, endpoints, payments csvs
    htlcsim simulate --in net/       # raw-per-payment-data.csv
    htlcsim analyze --in net/        # payments-statistics.json
    htlcsim run --out net/           # all of the above, plus a summary table

To see available commands
::

    htlcsim --help

(or ``python -m htlcsim --help``)

"""

import os
import json

root_dir = os.path.dirname(__file__)
rjoin = lambda *paths: os.path.join(root_dir, *paths)

data_dir = rjoin("data")
htlcsim_configs_file = rjoin(data_dir, "htlcsim_configs.json")

try:
    with open(htlcsim_configs_file) as fp:
        htlcsim_configs = json.load(fp)
except FileNotFoundError:
    htlcsim_configs = {
        "generate_dflts": {
            "seed": 42,
            "peers": 100,
            "avg_channels": 2.0,
            "sigma_topology": 10.0,
            "p_uncoop_before": 0.0,
            "p_uncoop_after": 0.0,
            "avg_capacity": 1000000,
            "gini": 0.5,
            "payment_rate": 10.0,
            "n_payments": 1000,
            "sigma_amount": 2.0,
            "same_recipient_fraction": 0.0,
            "base_fee": 1000,
            "proportional_fee": 1000,
            "timelock_delta": 144,
            "min_htlc": 1,
        },
        "simulate_dflts": {
            "seed": 42,
            "p_uncoop_before": 0.0,
            "p_uncoop_after": 0.0,
            "latency_min": 10,
            "latency_max": 100,
            "processing_latency": 0,
            "timeout_ms": 60000,
            "block_interval_ms": 600000,
            "validity_window_ms": 900000,
            "final_timelock": 144,
            "fee_weight": 1.0,
            "timelock_weight": 10.0,
        },
        "analyze_dflts": {"batches": 30, "warmup_batches": 1, "attempts_over": "all"},
    }

# File names of the workflow (inputs of the simulation phase, then its outputs)
PEERS_FILE = "peers.csv"
CHANNELS_FILE = "channels.csv"
ENDPOINTS_FILE = "endpoints.csv"
PAYMENTS_FILE = "payments.csv"
RAW_PAYMENT_DATA_FILE = "raw-per-payment-data.csv"
STATISTICS_FILE = "payments-statistics.json"

from htlcsim.model import (
    Peer,
    Channel,
    ChannelEndpoint,
    Payment,
    PaymentRecord,
    Route,
    RouteHop,
    Blacklist,
    Network,
)

