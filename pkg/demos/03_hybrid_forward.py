"""Follow one batch through the hybrid transformer and watch the shapes.

Run: python demos/03_hybrid_forward.py
"""

import numpy as np

from deepfake_vit import tensor as T
from deepfake_vit.backbone import extract_features
from deepfake_vit.data import DatasetConfig, generate_dataset
from deepfake_vit.model import (HybridViT, ModelConfig, PatchConfig, assemble_tokens, encode, patch_embed,
                                predict_probability, read_heads)
from deepfake_vit.rng import stream
from deepfake_vit.tensor import Tensor

cfg = ModelConfig()             # desk scale: 64x64 images, P=8, E=64, 4 layers, 4 heads, M=4
model = HybridViT(cfg, stream(0, "demo"))
print(f"{model.num_parameters():,} parameters")

x = Tensor(generate_dataset(DatasetConfig(count=4), "demo").images) - 0.5
with T.no_grad():
    z_patch = patch_embed(cfg.patch, model.patch_embedding, x)
    print("patch tokens Z_p      ", z_patch.shape, f"(N = {cfg.patch.num_patches})")
    z_feat = extract_features(model.backbone, x)
    print("CNN tokens Z_f        ", z_feat.shape, f"(M = {cfg.backbone.feature_tokens})")
    seq = assemble_tokens(z_patch, z_feat, model.class_token, model.distill_token, model.pos_embedding)
    print("assembled sequence    ", seq.tokens.shape, "= [class; pool(Z_p + Z_f -> N); distill] + E_pos")
    encoded = encode(model, seq.tokens)
    print("after the encoder     ", encoded.shape)
    heads = read_heads(model, encoded)
    print("class / distill logits", heads.class_logit.shape, heads.distill_logit.shape)

# untrained heads give near-chance probabilities
print("distill-head probabilities:", np.round(predict_probability(model, x.data + 0.5), 3))

# the same arithmetic at the published scale (no weights allocated here)
big = PatchConfig(384, 384, 3, 32, 1024)
print(f"384x384 with P=32 gives N = {big.num_patches} patches and a sequence of {big.num_patches + 2}")
