"""Hide bits in a quantized stream with CNV-QIM and read them back.

Run: python3 demos/qim_walkthrough.py
"""

import numpy as np

from stegsage import CoverSourceConfig, cnv_partition, gen_latent_sequence, make_codebooks, quantize_cover
from stegsage.corpus import format_rate_report, rate_report
from stegsage.qim import qim_embed, qim_extract

codebooks = make_codebooks(seed=7)
print("codebook sizes:", codebooks.sizes)

# split every codebook in two so that each codeword's nearest neighbour sits
# in the other half: forcing a codeword into the "wrong" half costs little
partition = cnv_partition(codebooks, n_bits=1, seed=7)
print("part sizes (codebook 1):", np.bincount(partition.assignment[0]).tolist())

latents = gen_latent_sequence(CoverSourceConfig(seed=3), codebooks, 20)
cover = quantize_cover(latents, codebooks)
stego = qim_embed(latents, codebooks, partition, rate=0.5, payload_seed=11)

print("selected frames:", np.flatnonzero(stego.plan.selected).tolist())
print("cover c1:", cover.indices[0].tolist())
print("stego c1:", stego.qis.indices[0].tolist())
recovered = qim_extract(stego, partition)
print(f"payload {stego.plan.payload.size} bits, recovered exactly: {np.array_equal(recovered, stego.plan.payload)}")

print()
print(format_rate_report(rate_report([0.0, 0.2, 0.6, 1.0], n_streams=50, T=100, seed=7)))
