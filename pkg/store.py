import asyncio
import json
import logging
import os
from typing import Any, Dict, Optional

import aiofiles
import numpy as np

import config
from alignment import AlignmentSolution
from burst_io import encode_png, srgb_to_linear
from models import RunReport
from tracking import TrackSet

logger = logging.getLogger(__name__)

RAW_MAGIC = "LXRAW"


def encode_raw(array: np.ndarray) -> bytes:
    """
    Raw little-endian float32 planar buffer behind a one-line text header
    "LXRAW width height channels".
    """
    array = np.asarray(array, dtype=np.float32)
    if array.ndim == 2:
        array = array[..., None]
    height, width, channels = array.shape
    header = f"{RAW_MAGIC} {width} {height} {channels}\n".encode("ascii")
    planar = np.ascontiguousarray(np.transpose(array, (2, 0, 1))).astype("<f4")
    return header + planar.tobytes()


def decode_raw(data: bytes) -> np.ndarray:
    newline = data.find(b"\n")
    if newline < 0:
        raise ValueError("Raw buffer has no header line")
    fields = data[:newline].decode("ascii").split()
    if len(fields) != 4 or fields[0] != RAW_MAGIC:
        raise ValueError(f"Bad raw buffer header: {data[:newline]!r}")
    width, height, channels = (int(v) for v in fields[1:])
    values = np.frombuffer(data[newline + 1:], dtype="<f4")
    if values.size != width * height * channels:
        raise ValueError(f"Raw buffer holds {values.size} values, header says {width}x{height}x{channels}")
    array = np.transpose(values.reshape(channels, height, width), (1, 2, 0)).astype(np.float32)
    return array[..., 0] if channels == 1 else array


def flow_name(source: int, target: int) -> str:
    return f"flow_{source:03d}_{target:03d}.raw"


class ArtifactStore:
    """
    Stage artifacts of one run on disk.

    Every stage command reads its inputs from and writes its outputs to
    the work directory, so stages can be re-run and inspected one by one.
    """

    def __init__(self, root: Optional[str] = None):
        """
        Args:
            root (str, optional): Work directory. Defaults to config.WORK_DIR.
        """
        self.root = root or config.WORK_DIR
        os.makedirs(self.root, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def exists(self, name: str) -> bool:
        return os.path.isfile(self.path(name))

    async def _write(self, name: str, data: bytes) -> str:
        path = self.path(name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        async with aiofiles.open(path, "wb") as handle:
            await handle.write(data)
        return path

    async def _read(self, name: str) -> bytes:
        async with aiofiles.open(self.path(name), "rb") as handle:
            return await handle.read()

    async def save_json(self, name: str, data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Write a JSON document.

        Args:
            name (str): File name inside the work directory
            data (Dict[str, Any]): JSON-serializable document

        Returns:
            Dict[str, Any]: Status and written path
        """
        try:
            path = await self._write(name, json.dumps(data, indent=2).encode("utf-8"))
            logger.debug(f"Saved {path}")
            return {"status": "success", "path": path}
        except Exception as e:
            logger.error(f"Failed to save {name}: {e}")
            return {"status": "error", "message": f"Failed to save {name}: {e}"}

    async def load_json(self, name: str) -> Dict[str, Any]:
        if not self.exists(name):
            return {"status": "error", "message": f"{name} not found in {self.root}"}
        try:
            data = json.loads((await self._read(name)).decode("utf-8"))
            return {"status": "success", "data": data}
        except Exception as e:
            logger.error(f"Failed to load {name}: {e}")
            return {"status": "error", "message": f"Failed to load {name}: {e}"}

    async def save_tracks(self, track_set: TrackSet) -> Dict[str, Any]:
        return await self.save_json("tracks.json", track_set.to_dict())

    async def load_tracks(self) -> Dict[str, Any]:
        result = await self.load_json("tracks.json")
        if result["status"] != "success":
            return result
        return {"status": "success", "tracks": TrackSet.from_dict(result["data"])}

    async def save_transforms(self, solution: AlignmentSolution) -> Dict[str, Any]:
        return await self.save_json("transforms.json", solution.to_dict())

    async def load_transforms(self) -> Dict[str, Any]:
        result = await self.load_json("transforms.json")
        if result["status"] != "success":
            return result
        return {"status": "success", "solution": AlignmentSolution.from_dict(result["data"])}

    async def save_selection(self, selection: Dict[str, Any]) -> Dict[str, Any]:
        return await self.save_json("selection.json", selection)

    async def load_selection(self) -> Dict[str, Any]:
        result = await self.load_json("selection.json")
        if result["status"] != "success":
            return result
        return {"status": "success", "selection": result["data"]}

    async def save_buffer(self, name: str, array: np.ndarray) -> Dict[str, Any]:
        """
        Write a float image or flow field as a raw planar buffer.

        Args:
            name (str): File name inside the work directory
            array (np.ndarray): H x W or H x W x C values

        Returns:
            Dict[str, Any]: Status and written path
        """
        try:
            data = await asyncio.to_thread(encode_raw, array)
            path = await self._write(name, data)
            logger.debug(f"Saved buffer {path} {array.shape}")
            return {"status": "success", "path": path}
        except Exception as e:
            logger.error(f"Failed to save buffer {name}: {e}")
            return {"status": "error", "message": f"Failed to save buffer {name}: {e}"}

    async def load_buffer(self, name: str) -> Dict[str, Any]:
        if not self.exists(name):
            return {"status": "error", "message": f"{name} not found in {self.root}"}
        try:
            array = decode_raw(await self._read(name))
            return {"status": "success", "array": array}
        except Exception as e:
            logger.error(f"Failed to load buffer {name}: {e}")
            return {"status": "error", "message": f"Failed to load buffer {name}: {e}"}

    async def save_mask(self, name: str, mask: np.ndarray) -> Dict[str, Any]:
        """Write a [0, 1] mask as an 8-bit grayscale PNG without gamma encoding."""
        try:
            values = np.clip(np.asarray(mask, dtype=np.float64), 0.0, 1.0)
            # encode_png applies the sRGB curve
            data = await asyncio.to_thread(encode_png, srgb_to_linear(values), 8)
            path = await self._write(name, data)
            return {"status": "success", "path": path}
        except Exception as e:
            logger.error(f"Failed to save mask {name}: {e}")
            return {"status": "error", "message": f"Failed to save mask {name}: {e}"}

    async def save_report(self, report: RunReport, directory: Optional[str] = None) -> Dict[str, Any]:
        """
        Write the run report next to the outputs.

        Args:
            report (RunReport): Report of the run
            directory (str, optional): Target directory. Defaults to the work directory.

        Returns:
            Dict[str, Any]: Status and written path
        """
        path = os.path.join(directory or self.root, config.REPORT_NAME)
        try:
            os.makedirs(os.path.dirname(path), exist_ok=True)
            async with aiofiles.open(path, "w") as handle:
                await handle.write(report.model_dump_json(indent=2))
            logger.info(f"Report written to {path}")
            return {"status": "success", "path": path}
        except Exception as e:
            logger.error(f"Failed to write report: {e}")
            return {"status": "error", "message": f"Failed to write report: {e}"}
