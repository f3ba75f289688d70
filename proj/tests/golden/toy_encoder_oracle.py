"""Independent reference for the toy encoder; prints C++ initialisers of golden rows.

Run: python3 tests/golden/toy_encoder_oracle.py
"""
import math

M = (1 << 64) - 1


def splitmix(state):
    state = (state + 0x9E3779B97F4A7C15) & M
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return state, z ^ (z >> 31)


def row(seed, domain, payload, dim):
    h = 0xCBF29CE484222325
    for b in bytes([ord(domain)]) + payload:
        h = ((h ^ b) * 0x100000001B3) & M
    state, start = splitmix(h ^ seed)
    state = start
    out = []
    for _ in range(dim):
        state, bits = splitmix(state)
        u = (bits >> 11) * 2.0 ** -53
        out.append((2.0 * u - 1.0) * math.sqrt(3.0))
    return out


def image_block(size, grid, patch):
    side = size // grid
    x0, y0 = (patch % grid) * side, (patch // grid) * side
    block = bytearray()
    for y in range(y0, y0 + side):
        for x in range(x0, x0 + side):
            for c in range(3):
                block.append((x * 7 + y * 13 + c * 29) % 256)
    return bytes(block)


def emit(name, values):
    print(f"// {name}")
    print("{" + ", ".join(v.hex() for v in values) + "},")


emit("seed 0, token 'hello', d=4", row(0, "t", b"hello", 4))
emit("seed 7, token 'meme', d=4", row(7, "t", b"meme", 4))
emit("seed 0, token '我', d=4", row(0, "t", "我".encode(), 4))
emit("seed 0, 32x32 gradient image, patch 0 of 16, d=4", row(0, "v", image_block(32, 4, 0), 4))
emit("seed 0, 32x32 gradient image, patch 15 of 16, d=4", row(0, "v", image_block(32, 4, 15), 4))
