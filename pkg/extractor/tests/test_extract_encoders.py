import io

import numpy as np
import pytest
import torch
from PIL import Image

from iqarag_extract.encoders import REGISTRY, encoder_names, load_encoder
from iqarag_extract.errors import ValidationError, WeightsError


def png_bytes(arr):
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def noise_png(seed, w=50, h=40):
    rng = np.random.default_rng(seed)
    return png_bytes(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def test_registry_roster_and_dims():
    assert encoder_names() == ("resnet", "swin-b", "dinov2", "clip", "lmm-vit")
    dims = {name: info.dim for name, info in REGISTRY.items()}
    assert dims == {"resnet": 2048, "swin-b": 1024, "dinov2": 768, "clip": 768, "lmm-vit": 768}


def test_unknown_encoder_is_rejected():
    with pytest.raises(ValidationError, match="unknown encoder 'vgg'"):
        load_encoder("vgg", weights="random")


def test_unknown_pooling_is_rejected():
    with pytest.raises(ValidationError, match="pooling must be one of"):
        load_encoder("clip", weights="random", pooling="max")


def test_token_pooling_does_not_apply_to_pooled_backbones():
    with pytest.raises(ValidationError, match="token pooling does not apply"):
        load_encoder("resnet", weights="random", pooling="mean")


@pytest.mark.parametrize("size", [(300, 100), (100, 300), (5, 7), (224, 224)])
def test_preprocess_always_yields_224_square(encoder_cache, size):
    enc = encoder_cache("resnet")
    tensor = enc.preprocess(noise_png(1, w=size[0], h=size[1]))
    assert tensor.shape == (3, 224, 224)
    assert tensor.dtype == torch.float32


def test_preprocess_normalization_matches_hand_computation(encoder_cache):
    # a constant image survives resize and crop unchanged, so every
    # output position must be exactly (v/255 - mean) / std
    enc = encoder_cache("resnet")
    arr = np.zeros((60, 80, 3), dtype=np.uint8)
    arr[..., 0], arr[..., 1], arr[..., 2] = 128, 64, 255
    tensor = enc.preprocess(png_bytes(arr))
    for c, value in enumerate((128, 64, 255)):
        expected = (np.float32(value) / np.float32(255.0) - np.float32(enc.info.mean[c]))
        expected = expected / np.float32(enc.info.std[c])
        assert np.allclose(tensor[c].numpy(), expected, atol=1e-6)


def test_preprocess_rejects_non_image_bytes(encoder_cache):
    with pytest.raises(ValidationError, match="cannot decode image"):
        encoder_cache("resnet").preprocess(b"definitely not an image")


def test_embed_empty_batch_is_a_zero_row_matrix(encoder_cache):
    rows = encoder_cache("resnet").embed_tensors([])
    assert rows.shape == (0, 2048) and rows.dtype == np.float32


def test_embed_returns_one_float32_row_per_image(encoder_cache):
    enc = encoder_cache("resnet")
    rows = enc.embed_bytes([noise_png(1), noise_png(2)])
    assert rows.shape == (2, 2048) and rows.dtype == np.float32
    assert np.isfinite(rows).all()
    assert not np.array_equal(rows[0], rows[1])


def test_same_seed_rebuild_embeds_identically(encoder_cache):
    data = noise_png(3)
    first = encoder_cache("resnet", seed=1).embed_bytes([data])
    again = load_encoder("resnet", weights="random", seed=1).embed_bytes([data])
    assert np.array_equal(first, again)


def test_different_seeds_embed_differently(encoder_cache):
    data = noise_png(3)
    a = encoder_cache("resnet", seed=1).embed_bytes([data])
    b = load_encoder("resnet", weights="random", seed=2).embed_bytes([data])
    assert not np.array_equal(a, b)


def test_cls_and_mean_pooling_differ_on_token_models(encoder_cache):
    data = noise_png(4)
    cls_rows = encoder_cache("lmm-vit", seed=1, pooling="cls").embed_bytes([data])
    mean_rows = load_encoder("lmm-vit", weights="random", seed=1, pooling="mean").embed_bytes([data])
    assert cls_rows.shape == mean_rows.shape == (1, 768)
    assert not np.array_equal(cls_rows, mean_rows)


def test_state_dict_path_reproduces_the_saved_model(encoder_cache, tmp_path):
    from torchvision.models import resnet50

    torch.manual_seed(99)
    reference = resnet50(weights=None)
    reference.fc = torch.nn.Identity()
    saved = tmp_path / "weights.pt"
    torch.save(reference.state_dict(), saved)

    data = noise_png(5)
    from_path = load_encoder("resnet", weights=str(saved)).embed_bytes([data])
    from_seed = load_encoder("resnet", weights="random", seed=99).embed_bytes([data])
    assert np.array_equal(from_path, from_seed)
    assert not np.array_equal(from_path, encoder_cache("resnet", seed=1).embed_bytes([data]))


def test_missing_weights_path_is_weights_error(tmp_path):
    with pytest.raises(WeightsError, match="cannot load weights"):
        load_encoder("resnet", weights=str(tmp_path / "absent.pt"))


def test_garbage_weights_file_is_weights_error(tmp_path):
    path = tmp_path / "junk.pt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(WeightsError, match="cannot load weights"):
        load_encoder("resnet", weights=str(path))


def test_wrong_architecture_state_dict_is_weights_error(tmp_path):
    path = tmp_path / "wrong.pt"
    torch.save({"bogus.weight": torch.zeros(3)}, path)
    with pytest.raises(WeightsError, match="cannot load weights"):
        load_encoder("resnet", weights=str(path))


def test_unfetchable_pretrained_weights_are_weights_error():
    # the sandbox has no route to checkpoint hosts, so the pretrained
    # path must fail with a message pointing at the offline alternatives
    with pytest.raises(WeightsError, match="cannot fetch pretrained weights for 'clip'"):
        load_encoder("clip", weights="pretrained")
