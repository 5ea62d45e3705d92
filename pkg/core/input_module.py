"""Input module for KoopWatch.
Replays a recorded measurement stream (CSV artifact) frame by frame.
"""

import logging

from data.storage_manager import StorageManager

logger = logging.getLogger(__name__)


class InputModule:
    """Frame source over a recorded stream file."""
    def __init__(self, out_dir, name):
        """Open the stream.

        Args:
            out_dir (str): Run directory holding the stream file.
            name (str): Stream file name, e.g. "received_stream.csv".

        Raises:
            MissingArtifact: The file does not exist.
        """
        self.source_id = f"{out_dir}/{name}"
        self.stream = StorageManager(out_dir).read_stream(name)
        self.position = 0
        logger.info("Opened stream %s (%d frames, %d sensors)", self.source_id, len(self.stream), self.stream.p)

    @property
    def dt(self):
        return self.stream.dt

    def get_frame(self):
        """Returns the next MeasurementFrame, or None once the stream is exhausted or released."""
        if self.stream is None or self.position >= len(self.stream):
            return None
        frame = self.stream.frames[self.position]
        self.position += 1
        return frame

    def __iter__(self):
        while True:
            frame = self.get_frame()
            if frame is None:
                return
            yield frame

    def release(self):
        if self.stream is not None:
            logger.debug("Released stream %s after %d frames", self.source_id, self.position)
        self.stream = None
