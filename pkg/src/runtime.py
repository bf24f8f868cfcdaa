"""
Runtime Resource Information

Host description for run manifests and process memory reporting for
long batch stages.
"""

import os
import platform
import logging
from typing import Dict, Any, Optional

try:
    import psutil
except ImportError:
    psutil = None

try:
    import cpuinfo
except ImportError:
    cpuinfo = None

_host_info_cache: Optional[Dict[str, Any]] = None


def _get_cpu_brand() -> str:
    """Get CPU brand string, falling back to the platform module"""
    brand = None
    if cpuinfo is not None:
        try:
            info = cpuinfo.get_cpu_info()
            brand = info.get('brand_raw', info.get('brand'))
        except Exception:
            brand = None
    if not brand:
        brand = platform.processor() or 'Unknown CPU'
    return brand


def host_info() -> Dict[str, Any]:
    """
    Describe the host a run executes on

    Returns:
        Dict with cpu brand, core counts, total RAM and Python version
    """
    global _host_info_cache
    if _host_info_cache is None:
        info = {
            'cpu_brand': _get_cpu_brand(),
            'os': f"{platform.system()} {platform.release()}",
            'python': platform.python_version(),
        }
        if psutil is not None:
            info['cpu_cores_physical'] = psutil.cpu_count(logical=False)
            info['cpu_cores_logical'] = psutil.cpu_count(logical=True)
            info['total_ram_gb'] = round(psutil.virtual_memory().total / (1024**3), 2)
        else:
            info['cpu_cores_logical'] = os.cpu_count()
        _host_info_cache = info
    return dict(_host_info_cache)


def default_workers() -> int:
    """Physical core count, or 1 when it cannot be determined"""
    if psutil is not None:
        count = psutil.cpu_count(logical=False)
        if count:
            return count
    return os.cpu_count() or 1


def memory_usage_mb() -> float:
    """Resident set size of this process in MiB (-1 when unavailable)"""
    if psutil is None:
        return -1.0
    return psutil.Process(os.getpid()).memory_info().rss / (1024**2)


def log_memory(logger: logging.Logger, stage: str) -> None:
    """Log the current resident memory after a pipeline stage"""
    rss = memory_usage_mb()
    if rss >= 0:
        logger.info(f"📊 {stage}: resident memory {rss:.1f} MiB")
