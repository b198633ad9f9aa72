import math

import numpy as np
import pytest
from meshes import cube, cylinder, quad, uv_sphere

from softshadow.imaging import TriangleMesh, bounding_box, direction_from_angles
from softshadow.tracer import (
    LEAF_SIZE,
    ShadowScene,
    TraceConfig,
    build_bvh,
    build_scene,
    direction_grid,
    sample_cone,
    trace_dataset,
    trace_shadow_texture,
)

ZENITH = np.array([0.0, 0.0, 1.0])


class TestScene:
    def test_cube(self):
        sc = build_scene(cube())
        assert sc.plane_side == 3.0
        np.testing.assert_allclose(bounding_box(sc.mesh).center, [0, 0, 0.5])

    def test_plane_is_three_times_largest_side(self):
        box = TriangleMesh([(0, 0, 0), (1, 0, 0), (0, 2, 0), (0, 0, 4)], [(0, 1, 2), (0, 1, 3), (0, 2, 3)])
        sc = build_scene(box.translated([3, -7, 2]))
        assert sc.plane_side == 12.0
        b = bounding_box(sc.mesh)
        assert b.min[2] == 0.0
        np.testing.assert_allclose(b.center[:2], [0, 0])

    def test_idempotent(self):
        once = build_scene(cube(origin=(4, 5, 6)))
        twice = build_scene(once.mesh)
        np.testing.assert_array_equal(once.mesh.vertices, twice.mesh.vertices)
        assert once.plane_side == twice.plane_side

    def test_degenerate_mesh_rejected(self):
        with pytest.raises(ValueError):
            build_scene(TriangleMesh([(1, 1, 1)] * 3, [(0, 1, 2)]))


class TestBVH:
    def test_structure(self):
        m = uv_sphere(1.0, (0, 0, 2), 10, 20)
        b = build_bvh(m.vertices, m.triangles)
        leaves = b.left < 0
        assert (b.count[leaves] <= LEAF_SIZE).all()
        assert sorted(b.order.tolist()) == list(range(len(m.triangles)))
        tri = m.vertices[m.triangles]
        for n in np.flatnonzero(leaves):
            ids = b.order[b.start[n] : b.start[n] + b.count[n]]
            assert (tri[ids].min(axis=(0, 1)) >= b.bmin[n] - 1e-12).all()
            assert (tri[ids].max(axis=(0, 1)) <= b.bmax[n] + 1e-12).all()
        for n in np.flatnonzero(~leaves):
            for c in (b.left[n], b.right[n]):
                assert (b.bmin[c] >= b.bmin[n]).all() and (b.bmax[c] <= b.bmax[n]).all()

    def test_deterministic(self):
        m = uv_sphere(1.0, (0, 0, 2), 8, 16)
        a, b = build_bvh(m.vertices, m.triangles), build_bvh(m.vertices, m.triangles)
        np.testing.assert_array_equal(a.order, b.order)
        np.testing.assert_array_equal(a.bmin, b.bmin)


class TestDirectionGrid:
    def test_count_and_unique_zenith(self):
        grid = direction_grid()
        assert len(grid) == 301
        zen = [g for g in grid if g.theta_deg == 0.0]
        assert len(zen) == 1
        np.testing.assert_array_equal(zen[0].d, ZENITH)

    def test_matches_naive_enumeration_after_dedup(self):
        naive = []
        for a in range(11):
            for b in range(30):
                naive.append(direction_from_angles(math.radians(4.5 * a), math.radians(12.0 * b)))
        assert len(naive) == 330
        unique = {tuple(np.round(d, 12) + 0.0) for d in naive}
        assert len(unique) == 10 * 30 + 1 == 301
        got = {tuple(np.round(g.d, 12) + 0.0) for g in direction_grid()}
        assert got == unique

    def test_all_above_45_degrees_elevation_bound(self):
        grid = direction_grid()
        for g in grid:
            assert abs(np.linalg.norm(g.d) - 1) < 1e-12
            assert g.d[2] >= math.cos(math.radians(45)) - 1e-12 > 0
        thetas = sorted({g.theta_deg for g in grid})
        assert thetas == pytest.approx([4.5 * k for k in range(11)])

    def test_theta_ascending(self):
        th = [g.theta_deg for g in direction_grid()]
        assert th == sorted(th)


class TestCone:
    def test_tiny_cap_returns_centre(self):
        c = np.array([0.3, -0.2, 0.9])
        c /= np.linalg.norm(c)
        d = sample_cone(c, 1e-9, np.random.default_rng(0), size=100)
        np.testing.assert_allclose(d, np.broadcast_to(c, d.shape), atol=1e-8)

    @pytest.mark.parametrize("center", [ZENITH, [0, 0, -1], [1, 0, 0], [0.5, 0.5, 0.1]])
    def test_cap_membership(self, center):
        half = math.radians(10)
        c = np.asarray(center, float) / np.linalg.norm(center)
        d = sample_cone(c, half, np.random.default_rng(1), size=20000)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
        assert (d @ c >= math.cos(half) - 1e-12).all()

    def test_mean_parallel_to_centre(self):
        c = np.array([0.2, 0.4, 0.8])
        c /= np.linalg.norm(c)
        d = sample_cone(c, math.radians(10), np.random.default_rng(2), size=1_000_000)
        m = d.mean(axis=0)
        ang = math.degrees(math.acos(min(1.0, m @ c / np.linalg.norm(m))))
        assert ang < 0.5

    def test_uniform_in_solid_angle(self):
        # cos(angle) is uniform on [cos h, 1] for a uniform cap
        half = math.radians(10)
        d = sample_cone(ZENITH, half, np.random.default_rng(3), size=200_000)
        frac = (d[:, 2] - math.cos(half)) / (1 - math.cos(half))
        hist, _ = np.histogram(frac, bins=10, range=(0, 1))
        assert np.abs(hist / len(d) - 0.1).max() < 0.005

    def test_bad_half_angle(self):
        with pytest.raises(ValueError):
            sample_cone(ZENITH, math.pi / 2, np.random.default_rng(0))


class TestTrace:
    def test_empty_scene_all_zero(self):
        tex = trace_shadow_texture(ShadowScene(None, 3.0), ZENITH, TraceConfig(16, 32))
        assert tex.image.shape == (16, 16)
        assert (tex.image == 0).all()

    def test_full_cover_quad_all_one(self):
        side = 3.0
        # quad sits above the ray origins (offset 1e-4 * side) and overhangs the plane
        sc = ShadowScene(quad(side, 2e-3 * side), side)
        tex = trace_shadow_texture(sc, ZENITH, TraceConfig(16, 32))
        assert (tex.image == 1).all()
        tilted = trace_shadow_texture(sc, direction_from_angles(math.radians(40), 1.0), TraceConfig(16, 32))
        assert (tilted.image == 1).all()

    def test_mesh_resting_on_plane_does_not_self_shadow_outside_footprint(self):
        sc = ShadowScene(quad(0.5, 0.0), 3.0)
        tex = trace_shadow_texture(sc, ZENITH, TraceConfig(12, 16))
        assert (tex.image == 0).all()

    def test_texel_origin_is_top_left_corner(self):
        side = 4.0
        # occluder over the (-x, +y) quadrant
        v = [(-3, 0, 1), (0, 0, 1), (0, 3, 1), (-3, 3, 1)]
        sc = ShadowScene(TriangleMesh(v, [(0, 1, 2), (0, 2, 3)]), side)
        img = trace_shadow_texture(sc, ZENITH, TraceConfig(16, 64, math.radians(0.01))).image
        assert img[0, 0] == 1.0 and img[3, 3] == 1.0
        assert img[-1, -1] == 0.0 and img[0, -1] == 0.0 and img[-1, 0] == 0.0

    def test_values_in_unit_interval_and_quantized(self):
        tex = trace_shadow_texture(build_scene(cube()), direction_from_angles(0.5, 0.3), TraceConfig(24, 40))
        assert tex.image.min() >= 0 and tex.image.max() <= 1
        np.testing.assert_allclose(tex.image * 40, np.round(tex.image * 40), atol=1e-9)

    def test_light_below_plane_rejected(self):
        with pytest.raises(ValueError):
            trace_shadow_texture(build_scene(cube()), [0, 0, -1], TraceConfig(4, 4))

    def test_deterministic_per_seed(self):
        sc = build_scene(cube())
        d = direction_from_angles(0.4, 1.0)
        a = trace_shadow_texture(sc, d, TraceConfig(20, 16, seed=7))
        b = trace_shadow_texture(sc, d, TraceConfig(20, 16, seed=7))
        c = trace_shadow_texture(sc, d, TraceConfig(20, 16, seed=8))
        np.testing.assert_array_equal(a.image, b.image)
        assert not np.array_equal(a.image, c.image)

    def test_thread_count_does_not_change_result(self):
        import numba

        from softshadow.tracer import set_threads

        sc = build_scene(cube())
        d = direction_from_angles(0.4, 1.0)
        before = numba.get_num_threads()
        try:
            set_threads(1)
            a = trace_shadow_texture(sc, d, TraceConfig(20, 16, seed=3))
            set_threads(numba.config.NUMBA_NUM_THREADS)
            b = trace_shadow_texture(sc, d, TraceConfig(20, 16, seed=3))
        finally:
            numba.set_num_threads(before)
        np.testing.assert_array_equal(a.image, b.image)

    def test_removing_triangles_never_increases_occlusion(self):
        m = build_scene(cube()).mesh
        d = direction_from_angles(0.6, 2.0)
        cfg = TraceConfig(24, 32, seed=5)
        full = trace_shadow_texture(ShadowScene(m, 3.0), d, cfg).image
        part = trace_shadow_texture(ShadowScene(TriangleMesh(m.vertices, m.triangles[::2]), 3.0), d, cfg).image
        assert (part <= full).all()
        assert part.sum() < full.sum()

    def test_sphere_centre_fully_shadowed_and_matches_reference(self):
        # radius 0.5 at height 1.5 subtends asin(1/3) = 19.5 deg > 10 deg cone
        sc = ShadowScene(uv_sphere(0.5, (0, 0, 1.5)), 3.0)
        spp = 64
        res = 32
        tex = trace_shadow_texture(sc, ZENITH, TraceConfig(res, spp, seed=1)).image
        ref = trace_shadow_texture(sc, ZENITH, TraceConfig(res, 64 * spp, seed=99)).image
        c = res // 2
        assert (tex[c - 1 : c + 1, c - 1 : c + 1] == 1.0).all()
        assert np.abs(tex - ref).mean() < 2 / math.sqrt(spp)

    def test_variance_halves_when_spp_doubles(self):
        sc = ShadowScene(uv_sphere(0.5, (0, 0, 1.5), 12, 24), 3.0)
        res = 16
        ref = trace_shadow_texture(sc, ZENITH, TraceConfig(res, 4096, seed=0)).image
        pen = (ref > 0.2) & (ref < 0.8)
        assert pen.sum() >= 4

        def var(spp):
            runs = np.stack([trace_shadow_texture(sc, ZENITH, TraceConfig(res, spp, seed=s)).image
                             for s in range(1, 301)])
            return runs.var(axis=0)[pen].mean()

        ratio = var(16) / var(32)
        assert 1.6 < ratio < 2.5

    def test_rotational_symmetry(self):
        # 12-sided prism is invariant under a 90 degree turn about z
        spp = 64
        sc = build_scene(cylinder(0.5, 1.0, 12))
        theta = math.radians(30)
        a = trace_shadow_texture(sc, direction_from_angles(theta, math.radians(20)), TraceConfig(48, spp, seed=1))
        b = trace_shadow_texture(sc, direction_from_angles(theta, math.radians(110)), TraceConfig(48, spp, seed=2))
        assert np.abs(np.rot90(a.image, 1) - b.image).mean() < 3 / math.sqrt(spp)
        # and the wrong turn direction is clearly distinguishable
        assert np.abs(np.rot90(a.image, -1) - b.image).mean() > np.abs(np.rot90(a.image, 1) - b.image).mean()


class TestDataset:
    def test_full_grid(self):
        sc = build_scene(cube())
        cfg = TraceConfig(6, 4, seed=11)
        ds = trace_dataset(sc, cfg)
        assert len(ds) == 301
        np.testing.assert_array_equal(ds[0].light_dir, ZENITH)
        grid = direction_grid()
        for tex, g in zip(ds, grid):
            np.testing.assert_array_equal(tex.light_dir, g.d)
        again = trace_dataset(sc, cfg)
        for x, y in zip(ds, again):
            np.testing.assert_array_equal(x.image, y.image)
