"""On-disk cache of TKM convolution tensors."""

import logging
import math
import os
from typing import Optional

from .dumps import FORMAT_VERSION, TENSOR_MAGIC, DumpHeader, read_blob, write_blob
from .errors import DumpFormatError
from .tkm import ConvolutionTensor, build_convolution_tensor, tensor_from_values


class TensorCache:
    """Stores convolution tensors so that repeated runs skip the build.

    Building the tensor costs a ``(3Nk)^3`` backward transform, while the
    result only depends on ``(Nk, L_k)``. It never becomes stale, so a file,
    once written, is reused by every later run with the same pair.

    Directory Structure
    -------------------
    A cache root (e.g. ``.cache``) holds a ``tkm`` subfolder with one file per
    tensor, named after its key: ``.cache/tkm/nk32_lk16.tkmt``. Files use the
    binary dump layout of ``dumps.py`` with magic ``TKMT``; the payload is the
    ``(2Nk)^3`` tensor in 64-bit. The FFT image is recomputed on load.

    Workflow
    --------
    ``get_tensor`` returns the tensor for a key; on a miss it builds the
    tensor, writes it back and logs a warning. ``load_tensor`` and
    ``write_tensor`` give direct access for callers that build elsewhere.
    With ``enabled=False`` every call builds and nothing touches the disk.
    """

    def __init__(
        self,
        cache_path: str,
        enabled: bool = True,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        """Initializes the cache handler.

        Args:
            cache_path (str): The root directory for the cache.
            enabled (bool): If False, the cache is bypassed.
            logger (Optional[logging.Logger]): The logger instance to use.
        """
        self.cache_path = cache_path
        self.tensor_dir = os.path.join(self.cache_path, "tkm")
        self.enabled = enabled
        self.logger = logger if logger is not None else logging.getLogger(__name__)
        if self.enabled:
            os.makedirs(self.cache_path, exist_ok=True)

    def _file_path(self, nk: int, l_k: float) -> str:
        """Constructs the full path of a tensor file.

        Args:
            nk (int): Momentum points per axis.
            l_k (float): Half-width of the momentum box.

        Returns:
            str: The path of the cache file for the key.
        """
        if nk <= 0 or not math.isfinite(l_k) or l_k <= 0:
            raise ValueError(f"Invalid tensor key Nk={nk}, L_k={l_k}")
        return os.path.join(self.tensor_dir, f"nk{nk}_lk{l_k:g}.tkmt")

    def load_tensor(self, nk: int, l_k: float) -> Optional[ConvolutionTensor]:
        """Retrieves a cached tensor.

        Args:
            nk (int): Momentum points per axis.
            l_k (float): Half-width of the momentum box.

        Returns:
            Optional[ConvolutionTensor]: The tensor, or None if not cached
            or the file does not match its key.

        Raises:
            DumpFormatError: If the file is not a tensor dump.
        """
        if not self.enabled:
            return None
        path = self._file_path(nk, l_k)
        if not os.path.exists(path):
            return None
        header, values = read_blob(path, TENSOR_MAGIC)
        if header.nk != nk or not math.isclose(header.l_k, l_k):
            self.logger.warning(
                "Cached tensor %s holds Nk=%d L_k=%s, ignoring it",
                path,
                header.nk,
                header.l_k,
            )
            return None
        side = 2 * nk
        if values.size != side**3:
            raise DumpFormatError(f"{path}: {values.size} values, expected {side**3}")
        self.logger.debug("Loaded tensor Nk=%d L_k=%s from %s", nk, l_k, path)
        return tensor_from_values(values.reshape((side,) * 3), l_k)

    def write_tensor(self, tensor: ConvolutionTensor) -> None:
        """Writes a tensor to its cache file.

        Args:
            tensor (ConvolutionTensor): The tensor to cache.
        """
        if not self.enabled:
            return
        path = self._file_path(tensor.nk, tensor.l_k)
        header = DumpHeader(
            TENSOR_MAGIC, FORMAT_VERSION, 3, 0, tensor.nk, 8, 0.0, 0.0, tensor.l_k, 0.0
        )
        try:
            write_blob(path, header, tensor.t)
            self.logger.info("Cached tensor Nk=%d L_k=%s in %s", tensor.nk, tensor.l_k, path)
        except OSError as e:
            self.logger.error("Failed to write tensor cache %s: %s", path, e)

    def get_tensor(self, nk: int, l_k: float) -> ConvolutionTensor:
        """Returns the tensor for a key, building and caching it on a miss.

        Args:
            nk (int): Momentum points per axis.
            l_k (float): Half-width of the momentum box.

        Returns:
            ConvolutionTensor: The tensor.
        """
        tensor = self.load_tensor(nk, l_k)
        if tensor is not None:
            return tensor
        if self.enabled:
            self.logger.warning(
                "No cached tensor for Nk=%d L_k=%s, building it", nk, l_k
            )
        tensor = build_convolution_tensor(nk, l_k)
        self.write_tensor(tensor)
        return tensor
