"""Stand-ins for the SIM credential functions and the ciphering keystream.

None of this is real cryptography and none of it needs to be: the model
only cares who holds a secret, not how hard it is to break. A challenge
response is a 64-bit truncation of a keyed hash, and frame protection is
an XOR keystream derived from a per-session seed. The property that
matters is reproduced faithfully: a party without the subscriber key (a
rogue cell, a passive sniffer) can neither answer a challenge nor read a
protected body.
"""

from __future__ import annotations

import hashlib

MAC_LEN = 8
AUTN_LEN = 16
KEYSTREAM_SEED_LEN = 16


def stub_mac(key: bytes, rand: bytes) -> bytes:
    """64-bit keyed response to an authentication challenge."""
    return hashlib.sha256(key + rand).digest()[:MAC_LEN]


def derive_autn(key: bytes, rand: bytes) -> bytes:
    """Network authentication token for a challenge; lets the holder of
    the key confirm the challenger also holds it."""
    return hashlib.sha256(key + rand + b"autn").digest()[:AUTN_LEN]


def derive_keystream_seed(key: bytes, key_id: int) -> bytes:
    """Per-session masking seed bound to a security context id."""
    material = key + key_id.to_bytes(4, "big") + b"ks"
    return hashlib.sha256(material).digest()[:KEYSTREAM_SEED_LEN]


def keystream_mask(seed: bytes, data: bytes) -> bytes:
    """XOR `data` with the keystream expanded from `seed`. Involution:
    applying it twice returns the input."""
    out = bytearray(len(data))
    block = b""
    counter = 0
    for i in range(len(data)):
        j = i % 32
        if j == 0:
            block = hashlib.sha256(seed + counter.to_bytes(8, "big")).digest()
            counter += 1
        out[i] = data[i] ^ block[j]
    return bytes(out)
