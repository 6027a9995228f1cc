#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Shared utilities for the bandit simulation engine: logging, errors, policy base."""

import logging
import os
import sys
import tempfile
from logging.handlers import RotatingFileHandler
from typing import Optional


# Numerical tolerances shared by every module.
STRUCTURAL_TOL = 1e-12
FIXED_POINT_TOL = 1e-10


class BenchError(Exception):
    """Base class for every error raised by the engine."""

    error_type = "bench_error"


class ChainValidationError(BenchError, ValueError):
    error_type = "validation_error"


class ModelRejectedError(BenchError, ValueError):
    error_type = "validation_error"


class ScenarioError(BenchError, ValueError):
    error_type = "validation_error"


class WatchdogAbort(BenchError, RuntimeError):
    """SB1 never reached its anchor within the configured cap."""

    error_type = "watchdog_abort"

    def __init__(self, arm: int, anchor: float, waited: int, slot: int) -> None:
        self.arm = arm
        self.anchor = anchor
        self.waited = waited
        self.slot = slot
        super().__init__(
            f"SB1 watchdog: arm {arm} did not revisit anchor reward {anchor!r} "
            f"within {waited} slots (aborted at slot {slot}); the model is close to reducible"
        )

    def __reduce__(self):
        return (self.__class__, (self.arm, self.anchor, self.waited, self.slot))


def get_log_path(log_filename: str) -> str:
    """Resolve the log path under the data dir or a temp fallback."""
    if "LEMP_BENCH_DATA_DIR" in os.environ:
        log_dir = os.path.join(os.environ["LEMP_BENCH_DATA_DIR"], "logs")
    else:
        log_dir = os.path.join(tempfile.gettempdir(), "lemp_bench_logs")

    os.makedirs(log_dir, exist_ok=True)
    return os.path.join(log_dir, log_filename)


def setup_rotating_logger(
    module_name: str,
    log_filename: str,
    service_name: str,
    level: int = logging.INFO,
) -> logging.Logger:
    """Initialize a rotating file logger + stderr stream logger."""
    log_file_path = get_log_path(log_filename)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[
            RotatingFileHandler(
                log_file_path,
                encoding="utf-8",
                maxBytes=5 * 1024 * 1024,  # 5MB
                backupCount=3,
            ),
            logging.StreamHandler(sys.stderr),
        ],
    )
    logger = logging.getLogger(module_name)
    logger.info(f"{service_name} log file: {log_file_path}")
    return logger


class BasePolicy:
    """Base class for arm-selection policies.

    Subclasses must implement:
      - name (str attribute)
      - select(t, last_revealed_state) -> arm
      - observe(observation) -> None

    A policy only ever sees revealed global states and the rewards of the
    arms it played. Randomness comes from an injected numpy Generator.
    """

    name = "base"

    def __init__(self, n_arms: int) -> None:
        if n_arms < 1:
            raise ScenarioError(f"policy needs at least one arm, got {n_arms}")
        self.n_arms = n_arms
        self.epoch_log: list = []

    def select(self, t: int, last_revealed_state: int) -> int:
        raise NotImplementedError

    def observe(self, observation) -> None:
        raise NotImplementedError

    # ------------------------------------------------------------------
    # Reporting hooks, overridden by epoch-structured policies
    # ------------------------------------------------------------------

    def exploration_epoch_counts(self) -> list:
        return [0] * self.n_arms

    def exploitation_epoch_count(self) -> int:
        return 0

    def snapshot(self) -> Optional[dict]:
        return None
