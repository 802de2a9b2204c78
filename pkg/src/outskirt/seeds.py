"""Named random substreams derived from one master seed.

``derive(master, "synthesis", fold)`` hashes the stream name with 64-bit
FNV-1a, xors it (and any integer salts, each passed through splitmix64)
into the master seed and finishes with one more splitmix64 round.  Stages
therefore draw from independent streams: changing how many numbers one
stage consumes never shifts another stage's randomness.
"""

MASK = (1 << 64) - 1

STREAMS = ("ae-init", "vae-init", "ae-noise", "vae-noise", "shuffle", "synthesis", "folds", "svm", "outliers", "mlp")


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK
    return x ^ (x >> 31)


def fnv1a64(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK
    return h


def derive(master, name, *salts):
    x = (int(master) & MASK) ^ fnv1a64(name)
    for salt in salts:
        x ^= splitmix64(int(salt) & MASK)
        x = splitmix64(x)
    return splitmix64(x)
