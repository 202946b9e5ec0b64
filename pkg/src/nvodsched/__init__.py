"""Near-video-on-demand broadcast scheduling: FB, DPFB and CTFB.

Segment maps and channel schedules, closed-form metrics, a slot-accurate
client simulator and a framed-datagram transport.
"""

from .core import CTFB, DPFB, FB, SchemeConfig, SlotClock, ValidationError, VideoSpec, validate, video_duration

__all__ = ["CTFB", "DPFB", "FB", "SchemeConfig", "SlotClock", "ValidationError", "VideoSpec", "validate", "video_duration"]
__version__ = "0.1.0"
