"""Model bridge serving segmentation and point tracking over stdio.

The bridge speaks a length-prefixed JSON protocol on stdin/stdout: each
message is a 4-byte big-endian payload length followed by canonical UTF-8
JSON.  A client opens the conversation with a ``hello`` carrying the session
directory where frames are staged as image files; the bridge answers
``hello_ack`` once its models are loaded, then serves ``segment`` and
``track`` requests until stdin closes.

Two backends are available: ``--stub`` answers from pure geometry
(deterministic, dependency-free — used for protocol conformance testing and
as a wiring check for clients), while the default mode loads SAM and TAPIR
checkpoints and serves real model predictions.
"""

__version__ = "0.1.0"
