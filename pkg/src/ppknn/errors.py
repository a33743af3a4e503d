"""Exception hierarchy.

Each class carries a stable ``code`` string; the runtime ships the matching
numeric ``wire_code`` inside abort frames so the peer can re-raise the same
error kind.
"""

from __future__ import annotations


class PPKNNError(Exception):
    code = "error"
    wire_code = 1


class InsecureParameters(PPKNNError):
    code = "insecure-parameters"
    wire_code = 2


class PlaintextOutOfRange(PPKNNError):
    code = "plaintext-out-of-range"
    wire_code = 3


class MalformedCiphertext(PPKNNError):
    code = "malformed-ciphertext"
    wire_code = 4


class DimensionError(PPKNNError):
    code = "dimension-error"
    wire_code = 5


class EmptyInput(PPKNNError):
    code = "empty-input"
    wire_code = 6


class KOutOfRange(PPKNNError):
    code = "k-out-of-range"
    wire_code = 7


class WOutOfRange(PPKNNError):
    code = "w-out-of-range"
    wire_code = 8


class AttributeOutOfRange(PPKNNError):
    code = "attribute-out-of-range"
    wire_code = 9


class SchemaMismatch(PPKNNError):
    code = "schema-mismatch"
    wire_code = 10


class KeyMismatch(PPKNNError):
    code = "key-mismatch"
    wire_code = 11


class ProtocolAbort(PPKNNError):
    code = "protocol-abort"
    wire_code = 12


class TransportError(PPKNNError):
    code = "transport-error"
    wire_code = 13


class TransportDisconnected(TransportError):
    code = "transport-disconnected"
    wire_code = 14


class FrameCorrupt(TransportError):
    code = "frame-corrupt"
    wire_code = 15


class SequenceGap(TransportError):
    code = "sequence-gap"
    wire_code = 16


class SessionIdCollision(TransportError):
    code = "session-id-collision"
    wire_code = 17


_BY_WIRE = {
    cls.wire_code: cls
    for cls in [
        PPKNNError, InsecureParameters, PlaintextOutOfRange, MalformedCiphertext,
        DimensionError, EmptyInput, KOutOfRange, WOutOfRange, AttributeOutOfRange,
        SchemaMismatch, KeyMismatch, ProtocolAbort, TransportError,
        TransportDisconnected, FrameCorrupt, SequenceGap, SessionIdCollision,
    ]
}


def from_wire_code(code: int) -> type[PPKNNError]:
    return _BY_WIRE.get(code, ProtocolAbort)
