"""
CSV 결과 파일에서 SVG 그래프를 그립니다.
그래프는 항상 CSV 를 다시 읽어서 만들고 메모리의 결과 객체는 쓰지 않습니다.
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from simulation.sim_harness import wilson_interval  # noqa: E402
from simulation.utils import load_table  # noqa: E402

logger = logging.getLogger(__name__)

# SVG 안의 id 와 날짜를 고정해 같은 CSV 에서 같은 파일이 나오게 합니다.
matplotlib.rcParams["svg.hashsalt"] = "ciblp"
SVG_METADATA = {"Date": None}


def _save(fig, svg_path) -> Path:
    path = Path(svg_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"그래프 저장: {path}")
    return path


def _error_bars(group):
    low, high = wilson_interval(group["errors"].to_numpy(), group["symbols"].to_numpy())
    ser = group["ser"].to_numpy()
    return np.vstack([np.clip(ser - low, 0.0, None), np.clip(high - ser, 0.0, None)])


def plot_ser_sweep(csv_path, svg_path) -> Path:
    """SER(로그 축) 대 SNR(dB), 방식별 한 줄, Wilson 95% 오차 막대"""
    df = load_table(csv_path)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for scheme, group in df.groupby("scheme", sort=False):
        group = group.sort_values("snr_db")
        ax.errorbar(
            group["snr_db"], group["ser"], yerr=_error_bars(group), marker="o", capsize=3, label=scheme
        )
    ax.set_yscale("log", nonpositive="mask")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("SER")
    ax.grid(True, which="both", ls=":")
    ax.legend()
    return _save(fig, svg_path)


def plot_block_sweep(csv_path, svg_path) -> Path:
    """SER 대 블록 길이 N. SNR 이 여러 개면 (방식, SNR) 마다 한 줄입니다."""
    df = load_table(csv_path)
    multi_snr = df["snr_db"].nunique() > 1
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for (scheme, snr), group in df.groupby(["scheme", "snr_db"], sort=False):
        group = group.sort_values("n_block")
        label = f"{scheme} @ {snr:g} dB" if multi_snr else scheme
        ax.errorbar(
            group["n_block"], group["ser"], yerr=_error_bars(group), marker="s", capsize=3, label=label
        )
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", nonpositive="mask")
    ax.set_xlabel("block length N")
    ax.set_ylabel("SER")
    ax.grid(True, which="both", ls=":")
    ax.legend()
    return _save(fig, svg_path)


def plot_timing(csv_path, svg_path) -> Path:
    """QP 풀이 시간(ms) 대 N, (K, N_T, 방식) 마다 한 줄, 표준편차 오차 막대"""
    df = load_table(csv_path)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for (k, n_t, scheme), group in df.groupby(["k", "n_t", "scheme"], sort=False):
        group = group.sort_values("n_block")
        ax.errorbar(
            group["n_block"],
            group["mean_solve_ms"],
            yerr=group["std_solve_ms"],
            marker="o",
            capsize=3,
            label=f"{scheme} ({k}x{n_t})",
        )
    ax.set_yscale("log", nonpositive="mask")
    ax.set_xlabel("block length N")
    ax.set_ylabel("QP solve time per block (ms)")
    ax.grid(True, which="both", ls=":")
    ax.legend()
    return _save(fig, svg_path)
