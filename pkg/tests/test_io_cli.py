import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from fgrn import io
from fgrn.cli import main
from fgrn.errors import CorruptFile, DecodeError, EmptyCorpus, InvalidConfig, VersionMismatch
from fgrn.inference import Evidence, propagate
from fgrn.quadtree import ArchitectureConfig, build_network, extract_patches, sample_images, train_layerwise


def write_gray(path, arr, mode="L"):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).convert(mode).save(path)
    return path


def trained_toy(seed=0, N=2, M=2):
    cfg = ArchitectureConfig(2, N, M, (2, 4, 3), epochs=3, seed=seed, smoothing=0.01)
    rng = np.random.default_rng(seed)
    imgs = [rng.integers(0, 2, size=cfg.image_shape) for _ in range(3)]
    pyr = [extract_patches(im, cfg, 20, seed=seed + j) for j, im in enumerate(imgs)]
    return train_layerwise(pyr, cfg)


class TestLoadImages:
    @pytest.mark.parametrize("suffix", [".pgm", ".png"])
    def test_black_white_checkerboard(self, tmp_path, suffix):
        check = (np.indices((6, 5)).sum(axis=0) % 2) * 255
        paths = [
            write_gray(tmp_path / f"a{suffix}", np.zeros((4, 4))),
            write_gray(tmp_path / f"b{suffix}", np.full((4, 4), 255)),
            write_gray(tmp_path / f"c{suffix}", check),
        ]
        corpus = io.load_images(paths, 0.5)
        assert (corpus.images[0] == 0).all()
        assert (corpus.images[1] == 1).all()
        np.testing.assert_array_equal(corpus.images[2], check // 255)
        assert corpus.names == [f"a{suffix}", f"b{suffix}", f"c{suffix}"]

    def test_threshold_inclusive(self, tmp_path):
        p = write_gray(tmp_path / "g.png", [[127, 128, 255, 0]])
        assert io.load_images([p], 128 / 255).images[0].tolist() == [[0, 1, 1, 0]]

    def test_bilevel_png(self, tmp_path):
        p = write_gray(tmp_path / "b.png", [[0, 255]], mode="1")
        assert io.load_images([p]).images[0].tolist() == [[0, 1]]

    def test_decode_errors(self, tmp_path):
        bad = tmp_path / "x.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(DecodeError):
            io.load_images([bad])
        rgb = tmp_path / "rgb.png"
        Image.new("RGB", (2, 2)).save(rgb)
        with pytest.raises(DecodeError):
            io.load_images([rgb])
        with pytest.raises(DecodeError):
            io.load_images([tmp_path / "missing.png"])

    def test_empty_corpus(self, tmp_path):
        with pytest.raises(EmptyCorpus):
            io.load_images(io.image_paths(tmp_path))
        with pytest.raises(EmptyCorpus):
            io.image_paths(tmp_path / "nope")

    def test_image_paths_sorted_and_filtered(self, tmp_path):
        for name in ("b.png", "a.pgm", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in io.image_paths(tmp_path)] == ["a.pgm", "b.png"]


class TestRender:
    @pytest.mark.parametrize("msg,value", [([0, 1], 255), ([1, 0], 0), ([0.5, 0.5], 128)])
    def test_mapped_values(self, msg, value):
        assert io.render_distribution_grid(np.array([[msg]], float))[0, 0] == value

    @given(st.floats(0, 1), st.integers(1, 5), st.integers(1, 5))
    def test_constant_grid_gives_constant_image(self, p, h, w):
        img = io.render_distribution_grid(np.broadcast_to([1 - p, p], (h, w, 2)).copy())
        assert img.shape == (h, w) and (img == img[0, 0]).all()
        assert img[0, 0] == int(np.floor(255 * p + 0.5))

    def test_accepts_message_grid(self):
        from fgrn.messages import Message
        grid = [[Message(np.array([0.25, 0.75]))]]
        assert io.render_distribution_grid(grid)[0, 0] == 191

    def test_written_file(self, tmp_path):
        out = tmp_path / "g.png"
        img = io.render_distribution_grid(np.array([[[0.2, 0.8], [1.0, 0.0]]]), out)
        np.testing.assert_array_equal(np.asarray(Image.open(out)), img)

    def test_masked_input_gray(self):
        img = io.render_masked_input(np.array([[1, 0, 1]]), np.array([[True, True, False]]))
        assert img.tolist() == [[255, 0, 128]]

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            io.render_distribution_grid(np.full((1, 1, 3), 1 / 3))


class TestCheckpoint:
    def test_untrained_roundtrip(self, tmp_path):
        net = build_network(ArchitectureConfig(3, 1, 2, (2, 3, 4, 2), seed=7))
        io.save_checkpoint(net, tmp_path / "n.ckpt")
        back = io.load_checkpoint(tmp_path / "n.ckpt")
        assert back.config == net.config
        for a, b in zip(net.layers, back.layers):
            assert a.cpts.tobytes() == b.cpts.tobytes() and a.prior.tobytes() == b.prior.tobytes()
        assert io.checkpoint_bytes(back) == io.checkpoint_bytes(net)

    def test_trained_roundtrip_posteriors(self, tmp_path):
        net = trained_toy()
        io.save_checkpoint(net, tmp_path / "t.ckpt")
        back = io.load_checkpoint(tmp_path / "t.ckpt")
        assert back.metadata == json.loads(json.dumps(io._jsonable(net.metadata)))
        rng = np.random.default_rng(1)
        for img in sample_images(net, 4, seed=3):
            mask = rng.random(img.shape) < 0.5
            ev = Evidence.from_image(img, 2, mask)
            a, b = propagate(net, ev), propagate(back, ev)
            for i in range(net.L + 1):
                assert np.array_equal(a.posterior(i), b.posterior(i))

    def test_version_mismatch(self):
        data = io.checkpoint_bytes(build_network(ArchitectureConfig(1, 1, 1, (2, 2))))
        bumped = data.replace(b'"version": 1', b'"version": 2', 1)
        with pytest.raises(VersionMismatch):
            io.checkpoint_from_bytes(bumped)
        reordered = data.replace(b'"NW"', b'"XX"', 1)
        with pytest.raises(VersionMismatch):
            io.checkpoint_from_bytes(reordered)

    def test_corrupt(self):
        data = io.checkpoint_bytes(build_network(ArchitectureConfig(1, 1, 1, (2, 2))))
        with pytest.raises(CorruptFile):
            io.checkpoint_from_bytes(b"garbage" + data)
        with pytest.raises(CorruptFile):
            io.checkpoint_from_bytes(data[:-3])
        flipped = bytearray(data)
        flipped[-1] ^= 0x01
        with pytest.raises(CorruptFile):
            io.checkpoint_from_bytes(bytes(flipped))
        with pytest.raises(CorruptFile):
            io.checkpoint_from_bytes(data.split(b"\n--\n")[0])

    def test_header_is_readable(self):
        data = io.checkpoint_bytes(build_network(ArchitectureConfig(1, 1, 1, (2, 2))))
        head = data.split(b"\n--\n")[0].decode()
        assert head.startswith(io.MAGIC)
        assert json.loads(head[len(io.MAGIC):])["version"] == io.FORMAT_VERSION


class TestConfig:
    TEXT = "L=2\nN=4\nM=4\ndS0=2\ndS1=16\ndS2=16  # latent\nepochs=5\nn_iterations=3\nseed=9\npatches_per_image=50\nthreshold=0.4\n"

    def test_parse(self):
        run = io.parse_config(self.TEXT)
        a = run.architecture
        assert (a.L, a.N, a.M, a.cardinalities, a.epochs, a.seed) == (2, 4, 4, (2, 16, 16), (5, 5), 9)
        assert a.learn[0].n_iterations == 3
        assert (run.patches_per_image, run.threshold) == (50, 0.4)

    @pytest.mark.parametrize("text", [
        "L=2\nN=4\nM=4\ndS0=2\ndS1=16\n",  # missing dS2
        "L=1\nN=1\nM=1\ndS0=2\ndS1=2\ncolour=red\n",
        "L=1\nN=1\nM=1\ndS0=2\ndS1=2\nL=2\n",
        "L=1\nN=1\nM=1\ndS0=2\ndS1=x\n",
        "L=1\nN=1\nM=1\ndS0=2\ndS1=2\nthreshold=2\n",
        "L=1\nN=1\ndS0=2\ndS1=2\n",
        "just words\n",
    ])
    def test_invalid(self, text):
        with pytest.raises(InvalidConfig):
            io.parse_config(text)


class TestSoftAndText:
    def test_read_soft(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("# header\n0 0 : 0.2 0.8\n0 1 : 1 0\n")
        np.testing.assert_array_equal(io.read_soft(p, (1, 2), 2), [[[0.2, 0.8], [1, 0]]])

    @pytest.mark.parametrize("body", ["0 0 : 0.2 0.8\n", "0 0 : 1\n0 1 : 1 0\n",
                                      "0 0 : 1 0\n0 0 : 1 0\n0 1 : 1 0\n", "zero : 1 0\n"])
    def test_read_soft_errors(self, tmp_path, body):
        p = tmp_path / "s.txt"
        p.write_text(body)
        with pytest.raises(DecodeError):
            io.read_soft(p, (1, 2), 2)

    def test_format_encoding(self):
        text = io.format_encoding({2: np.array([[[1 / 3, 2 / 3]]]), 1: np.array([[[0.5, 0.5]]])})
        assert text.splitlines() == ["1 0 0 : 0.5 0.5", "2 0 0 : 0.333333333333 0.666666666667"]


@pytest.fixture
def workspace(tmp_path):
    """A config file and a directory of four 8x8 training images."""
    rng = np.random.default_rng(0)
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for j in range(4):
        write_gray(imgs / f"p{j}.pgm", rng.integers(0, 2, (8, 8)) * 255)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("L=2\nN=4\nM=4\ndS0=2\ndS1=8\ndS2=4\nepochs=3\nn_iterations=5\nseed=1\n"
                   "patches_per_image=10\nthreshold=0.5\nsmoothing=0.01\n")
    mask = rng.random((8, 8)) < 0.5
    write_gray(tmp_path / "mask.png", mask * 255)
    soft = "\n".join(f"{r} {c} : 0.3 0.7" for r in range(8) for c in range(8))
    (tmp_path / "soft.txt").write_text(soft + "\n")
    return tmp_path


def run_all(ws, tag):
    ck = ws / f"{tag}.ckpt"
    assert main(["train", "--config", str(ws / "run.cfg"), "--images", str(ws / "imgs"), "--out", str(ck)]) == 0
    outs = [ck, ws / f"{tag}-gen.png", ws / f"{tag}-enc.txt", ws / f"{tag}-comp.png", ws / f"{tag}-corr.png"]
    assert main(["generate", "--ckpt", str(ck), "--layer", "2", "--state", "1", "--out", str(outs[1])]) == 0
    assert main(["encode", "--ckpt", str(ck), "--image", str(ws / "imgs" / "p0.pgm"), "--out", str(outs[2])]) == 0
    assert main(["complete", "--ckpt", str(ck), "--image", str(ws / "imgs" / "p1.pgm"),
                 "--mask", str(ws / "mask.png"), "--out", str(outs[3])]) == 0
    assert main(["correct", "--ckpt", str(ck), "--soft", str(ws / "soft.txt"), "--out", str(outs[4])]) == 0
    return outs


class TestCli:
    def test_commands_are_deterministic(self, workspace):
        first = [p.read_bytes() for p in run_all(workspace, "a")]
        second = [p.read_bytes() for p in run_all(workspace, "b")]
        assert first == second

    def test_outputs(self, workspace):
        ck, gen, enc, comp, corr = run_all(workspace, "c")
        net = io.load_checkpoint(ck)
        assert net.metadata["images"] == [f"p{j}.pgm" for j in range(4)]
        assert np.asarray(Image.open(gen)).shape == (8, 8)
        lines = enc.read_text().splitlines()
        assert len(lines) == 4 + 1
        assert lines[0].startswith("1 0 0 : ")
        assert len(lines[0].split(":")[1].split()) == 8
        shown = np.asarray(Image.open(comp))
        mask = io.load_mask(workspace / "mask.png")
        truth = io.load_images([workspace / "imgs" / "p1.pgm"]).images[0]
        np.testing.assert_array_equal(shown[mask], truth[mask] * 255)

    def test_oracle_check(self, workspace, capsys):
        assert main(["oracle-check", "--max-vars", "20", "--trials", "10", "--seed", "3"]) == 0
        assert "10 trials on random networks" in capsys.readouterr().out

    def test_oracle_check_checkpoint(self, tmp_path, capsys):
        ck = tmp_path / "small.ckpt"
        io.save_checkpoint(trained_toy(N=1), ck)  # 13 variables
        assert main(["oracle-check", "--ckpt", str(ck), "--max-vars", "20", "--trials", "5", "--seed", "0"]) == 0
        assert "checkpoint network" in capsys.readouterr().out

    def test_oracle_check_fallback(self, workspace, caplog):
        ck = workspace / "big.ckpt"
        io.save_checkpoint(build_network(ArchitectureConfig(2, 4, 4, (2, 8, 4))), ck)
        assert main(["oracle-check", "--ckpt", str(ck), "--max-vars", "20", "--trials", "3"]) == 0
        assert "too large" in caplog.text

    def test_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"nope")
        assert main(["encode", "--ckpt", str(bad), "--image", "x.png", "--out", str(tmp_path / "o")]) == 2
        assert "error" in capsys.readouterr().err

    def test_flags_required(self):
        with pytest.raises(SystemExit):
            main(["train", "--config", "x"])
