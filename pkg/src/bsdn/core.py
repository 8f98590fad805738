"""Small shared types: digests and accept/reject decisions."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Decision:
    """Outcome of a validation step.

    ``reason`` is a machine-readable tag for rejections (``stale_base``,
    ``over_capacity``, ...). ``detail`` carries extra context: the policy id
    for an allow decision, the failing cause for chain breaks.
    """

    ok: bool
    reason: str = ""
    detail: str = ""

    @classmethod
    def accept(cls, detail: str = "") -> "Decision":
        return cls(True, "", detail)

    @classmethod
    def reject(cls, reason: str, detail: str = "") -> "Decision":
        return cls(False, reason, detail)

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return f"accept({self.detail})" if self.detail else "accept"
        return f"reject({self.reason}{', ' + self.detail if self.detail else ''})"
