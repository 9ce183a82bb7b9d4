"""
The command-line tool
=====================

Every capability is also reachable from ``neuralqaad``. Training reads an INI
config, writes a manifest with input digests, a CSV log, periodic checkpoints
and a final checkpoint that ``reconstruct`` and ``eval`` consume.
"""

# %%
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())


def sh(*args):
    res = subprocess.run([sys.executable, "-m", "neuralqaad", *args],
                         capture_output=True, text=True)
    print("$ neuralqaad", " ".join(args), "->", res.returncode)
    print(res.stdout + res.stderr, end="")
    return res


# %%
for i in range(3):
    sh("gen", "gaussian_blobs", "512", str(work / "data" / f"blob_{i}.xyz"), "--seed", str(i))
sh("metric", str(work / "data" / "blob_0.xyz"), str(work / "data" / "blob_1.xyz"),
   "--kind", "emkd", "--depth", "1", "--epsilon", "0.001", "--iterations", "100000")

# %%
(work / "train.ini").write_text(f"""
[data]
dir = {work / 'data'}

[model]
k = 4
latent_dim = 4
width = 64

[train]
epochs = 10
batch_size = 3
sample_size = 128
epsilon = 0.001
max_iterations = 100000
checkpoint_every = 5

[output]
dir = {work / 'run'}
""")
sh("train", str(work / "train.ini"), "--threads", "1")
print((work / "run" / "train_log.csv").read_text().splitlines()[-1])

# %%
sh("eval", str(work / "run" / "final.ckpt"), str(work / "data"),
   "--epsilon", "0.001", "--iterations", "100000")
sh("reconstruct", str(work / "run" / "final.ckpt"), "0", str(work / "rec0.ply"))

# %%
# A bad config key is reported with its section and exits with code 2.
(work / "bad.ini").write_text("[train]\nbatchsize = 4\n")
sh("train", str(work / "bad.ini"))
