"""Shared fixtures. The million-auction synthetic log is session-scoped
because several suites (calibration checks, acceptance) reuse it."""

import pytest

from rtb_alloc.data_io import PAPER_TABLE_PROFILE, generate_synthetic
from rtb_alloc.engine import AuctionLog

MILLION_SEED = 108
MILLION_N = 1_000_000


@pytest.fixture(scope="session")
def million_log() -> AuctionLog:
    records = generate_synthetic(PAPER_TABLE_PROFILE, MILLION_N, MILLION_SEED)
    log = AuctionLog.from_records(records)
    del records
    log.hashes()  # warm the id-hash cache once for every consumer
    return log
