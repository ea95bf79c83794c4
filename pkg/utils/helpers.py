"""
Helper functions shared by the labeling, ranking and synthetic modules
"""

import hashlib
import math
import os

import numpy as np


# ==================== RANK DISCOUNTS ====================

def rank_discount(rank):
    """
    Position weight 1 / ln(1 + rank) for a 1-based rank

    Args:
        rank: 1-based position on the page

    Returns:
        float: 1.4427 for rank 1, 0.9102 for rank 2, ...
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return 1.0 / math.log1p(rank)


def discount_vector(length):
    """Discounts for ranks 1..length as a numpy array"""
    return 1.0 / np.log1p(np.arange(1, length + 1, dtype=float))


def dcg(gains):
    """Discounted cumulative gain of gains listed in rank order"""
    gains = np.asarray(gains, dtype=float)
    if gains.size == 0:
        return 0.0
    return float(np.dot(gains, discount_vector(gains.size)))


# ==================== LOGISTIC ====================

def logistic(x):
    """Overflow-free 1 / (1 + exp(-x)), scalar or array"""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


# ==================== HASHING & SEEDS ====================

def stable_bucket(key, num_buckets, seed=0):
    """
    Deterministic bucket for a string key, independent of PYTHONHASHSEED

    Args:
        key: string to place (a query term for fold assignment)
        num_buckets: number of buckets
        seed: salt, so different seeds give different assignments

    Returns:
        int in [0, num_buckets)
    """
    digest = hashlib.sha256(f"{seed}\x1f{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % num_buckets


def resolve_workers(workers):
    """0 or None means every available core"""
    if not workers or workers < 0:
        return os.cpu_count() or 1
    return int(workers)


# ==================== RATES ====================

def ratio(numerator, denominator, smoothing=0.0):
    """numerator / (denominator + smoothing), 0 when that denominator is 0"""
    bottom = denominator + smoothing
    if bottom == 0:
        return 0.0
    return numerator / bottom
