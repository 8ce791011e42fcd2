from __future__ import annotations

import threading

from fastapi import Request


def get_fit_slots(request: Request) -> threading.BoundedSemaphore:
    """FastAPI dependency that provides the semaphore bounding concurrent fits."""
    return request.app.state.fit_slots
