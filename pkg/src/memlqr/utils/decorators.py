import time
from functools import wraps
from typing import Any, Callable


def phase(name: str) -> Callable:
    """
    Decorator timing an asynchronous manager method as a named phase.

    The wrapped method's owner must expose ``log``, ``timings`` (a dict) and ``animation``.
    The spinner text is switched to the phase name while the method runs and the elapsed
    wall time is stored in ``timings[name]``, also when the method raises.

    :param name: Phase name used in reports and spinner text.
    :type name: str
    :return: The decorator.
    :rtype: Callable
    """

    def decorator(func: Callable) -> Any:
        @wraps(func)
        async def wrapper(self, *args, **kwargs):
            await self.animation.update_msg(f"{name.capitalize()}...")
            self.log.debug(f"Starting phase '{name}'")
            started = time.perf_counter()
            try:
                return await func(self, *args, **kwargs)
            finally:
                elapsed = time.perf_counter() - started
                self.timings[name] = self.timings.get(name, 0.0) + elapsed
                self.log.info(f"Phase '{name}' took {elapsed:.3f}s")

        return wrapper

    return decorator
