import os
from datetime import datetime

from core.logger import logger
from sio.errors import OutputPathError


class FileSystem:
    """Report I/O confined to one output root."""

    def __init__(self, root: str):
        self.root = os.path.abspath(root)

    def _assert_within_root(self, path: str, action: str) -> str:
        abs_path = os.path.abspath(os.path.join(self.root, path))
        try:
            # commonpath also rejects the prefix trick ('reports_evil' vs 'reports')
            inside = os.path.commonpath([abs_path, self.root]) == self.root
        except ValueError:
            # mixed drive letters on Windows
            inside = False
        if not inside:
            logger.error(f"Security Alert: Path traversal on {action}: {path}")
            raise OutputPathError(f"cannot {action} '{path}' outside the output root {self.root}")
        return abs_path

    def resolve(self, path: str) -> str:
        return self._assert_within_root(path, "resolve")

    def unique_path(self, path: str) -> str:
        """Absolute path for a new report; an existing name gets a timestamp suffix instead of being overwritten."""
        abs_path = self._assert_within_root(path, "write")
        if os.path.exists(abs_path):
            stem, ext = os.path.splitext(abs_path)
            stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            abs_path = f"{stem}_{stamp}{ext}"
            logger.info(f"FileSystem: {path} exists, using {abs_path}")
        return abs_path

    def write_file(self, path: str, content: str) -> str:
        abs_path = self._assert_within_root(path, "write")
        os.makedirs(os.path.dirname(abs_path), exist_ok=True)
        with open(abs_path, "w", encoding="utf-8", newline="") as f:
            f.write(content)
        logger.info(f"FileSystem: Wrote to {abs_path}")
        return abs_path

    def read_file(self, path: str) -> str:
        abs_path = self._assert_within_root(path, "read")
        if not os.path.exists(abs_path):
            raise FileNotFoundError(f"{path} does not exist under {self.root}")
        with open(abs_path, "r", encoding="utf-8", newline="") as f:
            content = f.read()
        logger.debug(f"FileSystem: Read from {abs_path}")
        return content

    def list_dir(self, path: str = ".") -> list[str]:
        abs_path = self._assert_within_root(path, "list")
        if not os.path.exists(abs_path):
            return []
        return sorted(os.listdir(abs_path))
