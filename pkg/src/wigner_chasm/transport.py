"""Message transports between patch workers.

Patches exchange two kinds of messages per spatial axis: the PMBC half-stencil
slopes of a shared interface plane, and the corrected shifted values on that
plane. A transport delivers a message to its destination patch and counts
messages and payload bytes; the numerics never look behind this interface.
"""

import collections
import enum
import logging
import queue
import threading
import time
from dataclasses import dataclass
from typing import Deque, Dict, Optional, Sequence, Tuple

import numpy as np
import zmq

from .errors import TransportConnectionError, TransportProtocolError

PatchId = Tuple[int, ...]

DEFAULT_TIMEOUT = 30.0


class MessageKind(enum.Enum):
    PMBC = "pmbc"
    CORRECTION = "correction"


@dataclass(frozen=True)
class ExchangeMessage:
    """One neighbour-exchange payload.

    Attributes:
        kind (MessageKind): What the payload holds.
        source (PatchId): Sending patch.
        dest (PatchId): Receiving patch.
        axis (int): Spatial axis of the shared plane.
        side (str): ``"L"`` or ``"R"``, the sender's boundary the plane
            belongs to.
        payload (np.ndarray): Plane tensor. Corrections carry only the
            momentum lines selected by ``mask``.
        mask (Optional[np.ndarray]): Per-momentum selection of corrected
            lines along the paired momentum axis.
    """

    kind: MessageKind
    source: PatchId
    dest: PatchId
    axis: int
    side: str
    payload: np.ndarray
    mask: Optional[np.ndarray] = None

    @property
    def key(self) -> Tuple[PatchId, PatchId, MessageKind, int]:
        return (self.dest, self.source, self.kind, self.axis)

    @property
    def nbytes(self) -> int:
        extra = 0 if self.mask is None else self.mask.nbytes
        return int(self.payload.nbytes) + extra


class Transport:
    """Base transport with message and byte counters.

    Subclasses implement ``_deliver`` and ``receive``.
    """

    def __init__(
        self, timeout: float = DEFAULT_TIMEOUT, logger: Optional[logging.Logger] = None
    ) -> None:
        if timeout <= 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        self.timeout = timeout
        self.logger = logger if logger is not None else logging.getLogger(__name__)
        self._counter_lock = threading.Lock()
        self.messages = 0
        self.bytes = 0

    def send(self, message: ExchangeMessage) -> None:
        """Posts a message without waiting for its receiver."""
        if message.side not in ("L", "R"):
            raise TransportProtocolError(f"Invalid side '{message.side}'")
        self._deliver(message)
        with self._counter_lock:
            self.messages += 1
            self.bytes += message.nbytes
        self.logger.debug(
            "%s %s -> %s axis %d: %d bytes",
            message.kind.value,
            message.source,
            message.dest,
            message.axis,
            message.nbytes,
        )

    def _deliver(self, message: ExchangeMessage) -> None:
        raise NotImplementedError

    def receive(
        self, dest: PatchId, source: PatchId, kind: MessageKind, axis: int
    ) -> ExchangeMessage:
        """Blocks until the matching message arrives.

        Raises:
            TransportConnectionError: If nothing arrives within the timeout.
        """
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self) -> "Transport":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class NullTransport(Transport):
    """Transport of a single-patch run; any exchange is a protocol error."""

    def _deliver(self, message: ExchangeMessage) -> None:
        raise TransportProtocolError(
            f"Single-patch run tried to send to {message.dest}"
        )

    def receive(
        self, dest: PatchId, source: PatchId, kind: MessageKind, axis: int
    ) -> ExchangeMessage:
        raise TransportProtocolError(f"Single-patch run tried to receive from {source}")


class InProcessTransport(Transport):
    """Thread-safe queues keyed by ``(dest, source, kind, axis)``."""

    def __init__(
        self, timeout: float = DEFAULT_TIMEOUT, logger: Optional[logging.Logger] = None
    ) -> None:
        super().__init__(timeout, logger)
        self._queues: Dict[Tuple, "queue.Queue[ExchangeMessage]"] = {}
        self._lock = threading.Lock()

    def _queue(self, key: Tuple) -> "queue.Queue[ExchangeMessage]":
        with self._lock:
            if key not in self._queues:
                self._queues[key] = queue.Queue()
            return self._queues[key]

    def _deliver(self, message: ExchangeMessage) -> None:
        self._queue(message.key).put(message)

    def receive(
        self, dest: PatchId, source: PatchId, kind: MessageKind, axis: int
    ) -> ExchangeMessage:
        try:
            return self._queue((dest, source, kind, axis)).get(timeout=self.timeout)
        except queue.Empty as e:
            raise TransportConnectionError(
                f"No {kind.value} message from {source} to {dest} on axis {axis} "
                f"within {self.timeout}s"
            ) from e


class ZmqTransport(Transport):
    """Loopback TCP transport, one PULL socket bound per patch.

    PUSH sockets towards a destination are created lazily on first send.
    Messages are pickled with ``send_pyobj``. A receiver stashes messages
    that arrive before they are asked for.
    """

    def __init__(
        self,
        patch_ids: Sequence[PatchId],
        host: str = "127.0.0.1",
        timeout: float = DEFAULT_TIMEOUT,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        super().__init__(timeout, logger)
        self.host = host
        self.context = zmq.Context()
        self.endpoints: Dict[PatchId, str] = {}
        self._pull: Dict[PatchId, zmq.Socket] = {}
        self._push: Dict[Tuple[PatchId, PatchId], zmq.Socket] = {}
        self._pending: Dict[PatchId, Dict[Tuple, Deque[ExchangeMessage]]] = {}
        self._locks: Dict[object, threading.Lock] = {}
        self._lock = threading.Lock()
        try:
            for patch_id in patch_ids:
                sock = self.context.socket(zmq.PULL)
                sock.setsockopt(zmq.LINGER, 0)
                port = sock.bind_to_random_port(f"tcp://{host}")
                self._pull[patch_id] = sock
                self.endpoints[patch_id] = f"tcp://{host}:{port}"
                self._pending[patch_id] = collections.defaultdict(collections.deque)
        except zmq.ZMQError as e:
            self.close()
            raise TransportConnectionError(f"Cannot bind patch sockets: {e}") from e
        self.logger.debug("Bound %d patch sockets on %s", len(self._pull), host)

    def _socket_lock(self, key: object) -> threading.Lock:
        with self._lock:
            if key not in self._locks:
                self._locks[key] = threading.Lock()
            return self._locks[key]

    def _push_socket(self, source: PatchId, dest: PatchId) -> zmq.Socket:
        key = (source, dest)
        if key not in self._push:
            if dest not in self.endpoints:
                raise TransportProtocolError(f"Unknown destination patch {dest}")
            sock = self.context.socket(zmq.PUSH)
            sock.setsockopt(zmq.LINGER, 0)
            sock.connect(self.endpoints[dest])
            self._push[key] = sock
        return self._push[key]

    def _deliver(self, message: ExchangeMessage) -> None:
        with self._socket_lock((message.source, message.dest)):
            try:
                self._push_socket(message.source, message.dest).send_pyobj(message)
            except zmq.ZMQError as e:
                raise TransportConnectionError(
                    f"Send {message.source} -> {message.dest} failed: {e}"
                ) from e

    def receive(
        self, dest: PatchId, source: PatchId, kind: MessageKind, axis: int
    ) -> ExchangeMessage:
        if dest not in self._pull:
            raise TransportProtocolError(f"Unknown destination patch {dest}")
        key = (dest, source, kind, axis)
        pending = self._pending[dest]
        deadline = time.monotonic() + self.timeout
        with self._socket_lock(dest):
            while not pending[key]:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportConnectionError(
                        f"No {kind.value} message from {source} to {dest} on axis "
                        f"{axis} within {self.timeout}s"
                    )
                sock = self._pull[dest]
                if sock.poll(int(remaining * 1000)):
                    message = sock.recv_pyobj()
                    if not isinstance(message, ExchangeMessage):
                        raise TransportProtocolError(
                            f"Unexpected object {type(message).__name__} on {dest}"
                        )
                    pending[message.key].append(message)
            return pending[key].popleft()

    def close(self) -> None:
        for sock in list(self._push.values()) + list(self._pull.values()):
            sock.close(linger=0)
        self._push.clear()
        self._pull.clear()
        if not self.context.closed:
            self.context.term()
