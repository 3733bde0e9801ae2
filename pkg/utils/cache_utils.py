import functools
import logging
import threading
import time
from collections import OrderedDict
from typing import Any, Callable, Hashable, Optional, Tuple

import numpy as np

# Setup logging
logger = logging.getLogger(__name__)


class MemoryCache:
    """
    Process-wide in-memory cache with optional TTL (Time-To-Live) expiration.
    Holds at most MAX_ENTRIES values and evicts the least recently used one.
    Values must be immutable; callers share them.
    """
    MAX_ENTRIES = 256
    _cache: "OrderedDict[Hashable, Tuple[Any, float]]" = OrderedDict()
    _lock = threading.Lock()

    @classmethod
    def get(cls, key: Hashable) -> Optional[Any]:
        """Get a value from the cache if it exists and is not expired"""
        with cls._lock:
            if key in cls._cache:
                value, expiry = cls._cache[key]
                if expiry > time.monotonic():
                    logger.debug(f"Memory cache hit for key: {key}")
                    cls._cache.move_to_end(key)
                    return value
                logger.debug(f"Memory cache expired for key: {key}")
                del cls._cache[key]
        return None

    @classmethod
    def set(cls, key: Hashable, value: Any, ttl: Optional[float] = None) -> None:
        """Set a value; ttl in seconds, None keeps it until evicted"""
        expiry = float("inf") if ttl is None else time.monotonic() + ttl
        with cls._lock:
            cls._cache[key] = (value, expiry)
            cls._cache.move_to_end(key)
            while len(cls._cache) > max(cls.MAX_ENTRIES, 1):
                cls._cache.popitem(last=False)
                logger.debug("Memory cache full, evicted the least recently used entry")

    @classmethod
    def clear(cls) -> None:
        with cls._lock:
            cls._cache.clear()
        logger.debug("Memory cache cleared")

    @classmethod
    def size(cls) -> int:
        return len(cls._cache)


def _freeze(value: Any) -> Hashable:
    if isinstance(value, np.ndarray):
        return ("ndarray", value.shape, value.tobytes())
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    return value


def cache(ttl: Optional[float] = None):
    """
    Memoise a pure function on its (hashable or array) arguments.

    Args:
        ttl: Time-to-live in seconds (default: never expires)
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            cache_key = (func.__module__, func.__qualname__, _freeze(args), _freeze(kwargs))
            cached_value = MemoryCache.get(cache_key)
            if cached_value is not None:
                return cached_value

            result = func(*args, **kwargs)
            MemoryCache.set(cache_key, result, ttl)
            return result
        return wrapper
    return decorator
