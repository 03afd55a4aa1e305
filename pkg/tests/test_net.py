import numpy as np
import pytest

from catquant.errors import ValidationError
from catquant.io import load_model, save_model
from catquant.net import (
    Layer,
    QuantSpec,
    TinyNet,
    collect_quant_params,
    forward_fp,
    forward_lq,
)
from catquant.quantizer import derive_minmax, fake_quantize
from catquant.synthetic import make_demo_inputs, make_demo_net


def identity_net(d=3):
    return TinyNet(
        layers=(Layer(weights=np.eye(d), bias=np.zeros(d), activation="none"),)
    )


class TestTinyNet:
    def test_dimension_chain_enforced(self):
        with pytest.raises(ValueError, match="layer 0"):
            TinyNet(
                layers=(
                    Layer(weights=np.ones((3, 2)), bias=np.zeros(3)),
                    Layer(weights=np.ones((2, 4)), bias=np.zeros(2)),
                )
            )

    def test_bias_width_enforced(self):
        with pytest.raises(ValueError):
            Layer(weights=np.ones((3, 2)), bias=np.zeros(2))

    def test_bad_activation_rejected(self):
        with pytest.raises(ValueError):
            Layer(weights=np.ones((1, 1)), bias=np.zeros(1), activation="gelu")


class TestForwardFp:
    def test_identity_network(self):
        net = identity_net()
        batch = np.arange(6, dtype=float).reshape(2, 3)
        np.testing.assert_array_equal(forward_fp(net, batch), batch)

    def test_relu_hand_case(self):
        net = TinyNet(
            layers=(
                Layer(weights=np.array([[1.0, 1.0]]), bias=np.zeros(1), activation="relu"),
            )
        )
        out = forward_fp(net, np.array([[-3.0, 1.0]]))
        assert out[0, 0] == 0.0

    def test_zero_weights_broadcast_bias(self):
        net = TinyNet(
            layers=(
                Layer(
                    weights=np.zeros((2, 3)), bias=np.array([1.5, -2.0]), activation="none"
                ),
            )
        )
        out = forward_fp(net, np.ones((4, 3)))
        np.testing.assert_array_equal(out, np.tile([1.5, -2.0], (4, 1)))

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError):
            forward_fp(identity_net(3), np.ones((2, 4)))


class TestForwardLq:
    def test_disabled_quantization_matches_fp_bit_exactly(self):
        net = make_demo_net(0)
        batch, _ = make_demo_inputs(net, 64, seed=0)
        params = collect_quant_params(
            net, batch, QuantSpec(weight_bits=None, act_bits=None, last_layer_bits=None)
        )
        np.testing.assert_array_equal(forward_lq(net, batch, params), forward_fp(net, batch))

    def test_w8a8_error_small_on_unit_scale_net(self):
        net = make_demo_net(1)
        batch, _ = make_demo_inputs(net, 128, seed=1)
        params = collect_quant_params(net, batch, QuantSpec(8, 8, 8))
        gap = np.max(np.abs(forward_lq(net, batch, params) - forward_fp(net, batch)))
        assert gap < 0.05

    def test_two_bit_worse_than_eight_bit(self):
        for seed in (0, 1, 2):
            net = make_demo_net(seed)
            batch, _ = make_demo_inputs(net, 128, seed=seed)
            fp = forward_fp(net, batch)
            mses = []
            for bits in (2, 4, 8):
                params = collect_quant_params(
                    net, batch, QuantSpec(bits, bits, last_layer_bits=8)
                )
                mses.append(float(np.mean((forward_lq(net, batch, params) - fp) ** 2)))
            assert mses[0] > mses[2]
            assert mses[0] >= mses[1] >= mses[2]

    def test_grid_resident_weights_exact(self):
        net = make_demo_net(2)
        batch, _ = make_demo_inputs(net, 32, seed=2)
        params = collect_quant_params(net, batch, QuantSpec(4, None, 4))
        snapped = TinyNet(
            layers=tuple(
                Layer(
                    weights=fake_quantize(layer.weights, params[f"layer{i}.weight"]),
                    bias=layer.bias,
                    activation=layer.activation,
                )
                for i, layer in enumerate(net.layers)
            )
        )
        np.testing.assert_array_equal(
            forward_lq(snapped, batch, params), forward_fp(snapped, batch)
        )

    def test_missing_entry_is_configuration_error(self):
        net = make_demo_net(0)
        batch, _ = make_demo_inputs(net, 16, seed=0)
        params = collect_quant_params(net, batch, QuantSpec(4, 4, 8))
        del params["layer0.act"]
        with pytest.raises(ValueError, match="layer0.act"):
            forward_lq(net, batch, params)

    def test_last_layer_bits_apply_to_final_weights(self):
        net = make_demo_net(3)
        batch, _ = make_demo_inputs(net, 16, seed=3)
        params = collect_quant_params(net, batch, QuantSpec(2, 2, 8))
        assert params["layer0.weight"].bit_width == 2
        assert params["layer1.weight"].bit_width == 8
        assert "layer1.act" not in params

    def test_activation_params_from_calibration_pass(self):
        net = make_demo_net(4)
        batch, _ = make_demo_inputs(net, 64, seed=4)
        params = collect_quant_params(net, batch, QuantSpec(None, 8, None))
        hidden = np.maximum(batch @ net.layers[0].weights.T + net.layers[0].bias, 0.0)
        expected = derive_minmax(hidden, 8)
        assert float(params["layer0.act"].scale) == float(expected.scale)


class TestModelRoundTrip:
    def test_minimal_single_layer_file(self, tmp_path):
        path = tmp_path / "model.json"
        net = TinyNet(
            layers=(Layer(weights=np.ones((2, 3)), bias=np.zeros(2), activation="none"),)
        )
        save_model(path, net)
        loaded = load_model(path)
        assert loaded.out_dim == 2

    def test_round_trip_bit_exact(self, tmp_path):
        net = make_demo_net(5)
        path = tmp_path / "model.json"
        save_model(path, net)
        loaded = load_model(path)
        for original, restored in zip(net.layers, loaded.layers):
            np.testing.assert_array_equal(original.weights, restored.weights)
            np.testing.assert_array_equal(original.bias, restored.bias)
            assert original.activation == restored.activation

    def test_dimension_mismatch_names_layers(self, tmp_path):
        path = tmp_path / "model.json"
        document = {
            "schema_version": "catquant-model-v1",
            "layers": [
                {"weights": [[1.0, 2.0]], "bias": [0.0], "activation": "relu"},
                {"weights": [[1.0, 2.0]], "bias": [0.0], "activation": "none"},
            ],
        }
        import json

        path.write_text(json.dumps(document))
        with pytest.raises(ValidationError, match="layer 0"):
            load_model(path)

    def test_malformed_json_reports_location(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"schema_version": "catquant-model-v1", "layers": [')
        from catquant.errors import FormatError

        with pytest.raises(FormatError, match="line"):
            load_model(path)
