"""
=============================================================================
ARTIFACT SERVICE - Output directory for experiment results
=============================================================================

Every file an experiment produces goes through one ArtifactService, so there
is exactly one writer per output directory even when the convergence rows
are computed in worker processes.

Files written per experiment <name>:
    <name>_report.csv       N,alpha1,w1,error,order,bound_rhs,bound_ok
    <name>_bounds.txt       bound-check summary
    <name>_value_true.csv   value grid of the true dynamics
    <name>_trajectory.csv   optimal multi-trajectory (time, atom<i>_x<j>)
    <name>_control.csv      the control driving it (time, u_1..u_m)

The directory comes from the constructor argument, else AVGCTL_OUT_DIR,
else ./results.
=============================================================================
"""
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Union

logger = logging.getLogger(__name__)


class ArtifactService:
    """
    Writes text artifacts into one output directory.

    Usage:
        store = ArtifactService("results")
        path = store.write_text("test1_report.csv", csv_text)
    """

    def __init__(self, directory: Optional[Union[str, Path]] = None):
        self.directory = Path(directory or os.getenv("AVGCTL_OUT_DIR", "results"))

    def ensure_directory(self) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        return self.directory

    def write_text(self, name: str, text: str) -> Path:
        """
        Write `text` to <directory>/<name>, replacing any previous file.

        Names must be plain file names; the service never writes outside its
        directory.
        """
        if not name or Path(name).name != name:
            raise ValueError(f"artifact name must be a plain file name, got {name!r}")
        path = self.ensure_directory() / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8", newline="")
        tmp.replace(path)
        logger.info("wrote %s (%d bytes)", path, len(text.encode("utf-8")))
        return path

    def read_text(self, name: str) -> Optional[str]:
        path = self.directory / name
        if not path.is_file():
            return None
        return path.read_text(encoding="utf-8")

    def list_files(self, prefix: str = "") -> List[Dict]:
        """
        Files in the directory whose name starts with `prefix`, sorted by name:
            - name: the file name
            - size: size in bytes
        """
        if not self.directory.is_dir():
            return []
        return [{"name": p.name, "size": p.stat().st_size}
                for p in sorted(self.directory.iterdir()) if p.is_file() and p.name.startswith(prefix)]
