import numpy as np

from reeb_diffusion.streams import PathNoise, initial_uniforms, path_blocks, path_generator


def test_path_generator_depends_only_on_seed_and_path():
    a = path_generator(7, 3).standard_normal(5)
    b = path_generator(7, 3).standard_normal(5)
    other_path = path_generator(7, 4).standard_normal(5)
    other_substream = path_generator(7, 3, substream=1).standard_normal(5)

    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, other_path)
    assert not np.allclose(a, other_substream)


def test_path_noise_is_independent_of_batch_composition():
    full = PathNoise(11, [0, 1, 2, 3], chunk=4)
    part = PathNoise(11, [2, 3], chunk=4)

    for _ in range(9):
        z_full, u_full = full.next()
        z_part, u_part = part.next()
        np.testing.assert_array_equal(z_full[2:], z_part)
        np.testing.assert_array_equal(u_full[2:], u_part)


def test_select_keeps_surviving_streams_in_step():
    noise = PathNoise(5, [0, 1, 2], chunk=3)
    reference = PathNoise(5, [2], chunk=3)
    noise.next()
    reference.next()

    noise.select(np.array([False, False, True]))

    for _ in range(5):
        z, _ = noise.next()
        z_ref, _ = reference.next()
        np.testing.assert_array_equal(z, z_ref)
    assert noise.path_ids.tolist() == [2]


def test_without_uniforms_returns_none():
    _, uniforms = PathNoise(1, [0, 1], with_uniforms=False).next()
    assert uniforms is None


def test_initial_uniforms_use_a_separate_stream():
    u = initial_uniforms(3, [0, 1, 2])
    assert u.shape == (3,)
    assert np.all((u >= 0.0) & (u < 1.0))
    assert u[0] != path_generator(3, 0).random()


def test_path_blocks_partition_is_fixed():
    blocks = path_blocks(10, 4)
    assert [b.tolist() for b in blocks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
