import numpy as np
import pytest

from airtree.eigen import EigenTriple
from airtree.errors import ValidationError
from airtree.phantom import PhantomSpec, make_phantom
from airtree.vesselness import (
    VesselnessParams,
    frangi,
    frangi_single_scale,
    gaussian_smooth,
    hessian_at_scale,
    vesselness_response,
)
from airtree.volume import Volume3

from oracles import gauss3d_direct


def as_f64(vol):
    return Volume3(vol.data.astype(np.float64), vol.spacing, vol.origin)


class TestGaussianSmooth:
    def test_constant_preserved(self):
        vol = Volume3(np.full((8, 8, 8), 7.0))
        out = gaussian_smooth(vol, 1.5)
        np.testing.assert_allclose(out.data, 7.0, rtol=1e-12)

    def test_impulse_matches_direct_kernel(self):
        data = np.zeros((33, 33, 33))
        data[16, 16, 16] = 1.0
        out = gaussian_smooth(Volume3(data), 2.0).data
        for offset in [(0, 0, 0), (1, 0, 0), (0, 2, 0), (3, 1, 2), (-2, 4, -1)]:
            want = gauss3d_direct(2.0, (1.0, 1.0, 1.0), offset)
            got = out[16 + offset[0], 16 + offset[1], 16 + offset[2]]
            np.testing.assert_allclose(got, want, rtol=1e-12)
        # symmetric under axis permutation (up to separable-pass rounding order)
        np.testing.assert_allclose(out[17, 16, 16], out[16, 17, 16], rtol=1e-13)
        np.testing.assert_allclose(out[17, 16, 16], out[16, 16, 17], rtol=1e-13)

    def test_semigroup(self):
        rng = np.random.default_rng(0)
        base = gaussian_smooth(Volume3(rng.standard_normal((24, 24, 24))), 1.0)
        twice = gaussian_smooth(gaussian_smooth(base, 1.0), 1.5)
        once = gaussian_smooth(base, np.sqrt(1.0**2 + 1.5**2))
        interior = (slice(8, -8),) * 3
        assert np.max(np.abs(twice.data[interior] - once.data[interior])) < 1e-3

    def test_anisotropic_spacing_kernel_width(self):
        # coarse axis gets a narrower voxel kernel; physically isotropic blur
        data = np.zeros((41, 41, 41))
        data[20, 20, 20] = 1.0
        out = gaussian_smooth(Volume3(data, spacing=(1.0, 2.0, 1.0)), 2.0).data
        want = gauss3d_direct(2.0, (1.0, 2.0, 1.0), (0, 1, 0))
        np.testing.assert_allclose(out[20, 21, 20], want, rtol=1e-12)

    def test_sigma_validation(self):
        with pytest.raises(ValidationError):
            gaussian_smooth(Volume3(np.zeros((4, 4, 4))), 0.0)


class TestHessian:
    def test_quadratic_x_squared(self):
        x = np.arange(33, dtype=np.float64) * 1.0
        data = np.broadcast_to((x**2)[:, None, None], (33, 33, 33)).copy()
        for gamma in (0.5, 1.0):
            h = hessian_at_scale(Volume3(data), 1.5, gamma)
            norm = 1.5 ** (2 * gamma)
            interior = (slice(10, -10),) * 3
            np.testing.assert_allclose(h.xx[interior], 2.0 * norm, rtol=1e-9)
            for comp in (h.yy, h.zz, h.xy, h.xz, h.yz):
                np.testing.assert_allclose(comp[interior], 0.0, atol=1e-9)

    def test_product_xy(self):
        x = np.arange(33, dtype=np.float64)
        data = x[:, None, None] * x[None, :, None] * np.ones((1, 1, 33))
        h = hessian_at_scale(Volume3(data), 1.0, 1.0)
        interior = (slice(8, -8),) * 3
        np.testing.assert_allclose(h.xy[interior], 1.0, rtol=1e-9)
        np.testing.assert_allclose(h.xx[interior], 0.0, atol=1e-9)

    def test_constant_zero(self):
        h = hessian_at_scale(Volume3(np.full((8, 8, 8), 3.0)), 1.0)
        for comp in (h.xx, h.yy, h.zz, h.xy, h.xz, h.yz):
            np.testing.assert_allclose(comp, 0.0, atol=1e-12)

    def test_too_small(self):
        with pytest.raises(ValidationError):
            hessian_at_scale(Volume3(np.zeros((4, 8, 8))), 1.0)

    def test_spacing_denominators(self):
        # same physical image sampled coarser along x gives the same Hxx
        x_fine = np.arange(65, dtype=np.float64) * 0.5
        fine = np.broadcast_to((x_fine**2)[:, None, None], (65, 17, 17)).copy()
        h = hessian_at_scale(Volume3(fine, spacing=(0.5, 1.0, 1.0)), 1.0)
        np.testing.assert_allclose(h.xx[32, 8, 8], 2.0, rtol=1e-9)


class TestResponse:
    P = VesselnessParams(scales=(1.0,), alpha=0.5, beta=0.5, c=10.0, polarity="bright")

    def test_positive_lambda_suppressed(self):
        assert vesselness_response(EigenTriple(0.0, 1.0, 2.0), self.P, 10.0) == 0.0
        assert vesselness_response(EigenTriple(0.0, -1.0, 2.0), self.P, 10.0) == 0.0

    def test_all_zero(self):
        assert vesselness_response(EigenTriple(0.0, 0.0, 0.0), self.P, 10.0) == 0.0

    def test_ideal_bright_tube_limit(self):
        # lambda = (0, -a, -a), a >> c: v -> (1 - e^-2)
        v = vesselness_response(EigenTriple(0.0, -1e6, -1e6), self.P, 10.0)
        np.testing.assert_allclose(v, 1.0 - np.exp(-2.0), rtol=1e-9)

    def test_dark_polarity_flips_sign_test(self):
        dark = VesselnessParams(scales=(1.0,), c=10.0, polarity="dark")
        assert vesselness_response(EigenTriple(0.0, -1.0, -2.0), dark, 10.0) == 0.0
        assert vesselness_response(EigenTriple(0.0, 1e6, 1e6), dark, 10.0) > 0.5

    def test_c_must_be_positive(self):
        with pytest.raises(ValidationError):
            vesselness_response(EigenTriple(0.0, -1.0, -2.0), self.P, 0.0)


class TestFrangi:
    def tube(self, polarity="bright-on-dark", dims=(32, 32, 32)):
        img, truth = make_phantom(PhantomSpec("straight-tube", 2.0, dims=dims,
                                              polarity=polarity), 0)
        return as_f64(img), truth

    def test_constant_volume_zero_map(self):
        out = frangi(Volume3(np.full((16, 16, 16), 5.0)),
                     VesselnessParams(scales=(1.0, 2.0), polarity="bright"))
        assert not out.data.any()

    def test_output_range(self):
        vol, _ = self.tube()
        out = frangi(vol, VesselnessParams(scales=(1.0, 2.0), polarity="bright"))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_tube_centerline_enhanced(self):
        vol, truth = self.tube()
        out = frangi(vol, VesselnessParams(scales=(1.0, 2.0, 3.0), polarity="bright"))
        centerline = out.data[16, 16, 8:-8]
        background = out.data[2, 2, 8:-8]
        assert centerline.min() > 10 * max(background.max(), 1e-12)

    def test_polarity_duality_exact(self):
        vol, _ = self.tube()
        p_bright = VesselnessParams(scales=(1.0, 2.0), polarity="bright")
        p_dark = VesselnessParams(scales=(1.0, 2.0), polarity="dark")
        a = frangi(vol, p_bright)
        b = frangi(Volume3(-vol.data, vol.spacing), p_dark)
        assert np.array_equal(a.data, b.data)

    def test_dark_tube_with_dark_polarity(self):
        vol, _ = self.tube(polarity="dark-on-bright")
        out = frangi(vol, VesselnessParams(scales=(1.0, 2.0, 3.0), polarity="dark"))
        assert out.data[16, 16, 16] > 0.5

    def test_axis_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        data = gaussian_smooth(Volume3(rng.standard_normal((20, 24, 28)),
                                       spacing=(1.0, 1.5, 2.0)), 1.0)
        p = VesselnessParams(scales=(1.0, 2.0), polarity="bright")
        base = frangi(data, p)
        perm = (2, 0, 1)
        permuted_vol = Volume3(data.data.transpose(perm),
                               spacing=tuple(data.spacing[i] for i in perm))
        out_perm = frangi(permuted_vol, p)
        np.testing.assert_allclose(out_perm.data, base.data.transpose(perm), atol=1e-10)

    def test_intensity_shift_invariance(self):
        vol, _ = self.tube()
        p = VesselnessParams(scales=(1.0, 2.0), polarity="bright")
        a = frangi(vol, p)
        b = frangi(Volume3(vol.data + 10.0, vol.spacing), p)
        np.testing.assert_allclose(a.data, b.data, atol=1e-6)

    def test_suppression_rule_exact_zero(self):
        vol, _ = self.tube()
        p = VesselnessParams(scales=(2.0,), polarity="bright")
        from airtree.vesselness import hessian_at_scale as hs
        from airtree.eigen import eigvals_sym3_field
        h = hs(vol, 2.0, p.gamma)
        l1, l2, l3 = eigvals_sym3_field(h.xx, h.yy, h.zz, h.xy, h.xz, h.yz)
        resp = frangi_single_scale(vol, p, 2.0)
        positive = (l2 > 0) | (l3 > 0)
        assert (resp[positive] == 0.0).all()

    def test_fixed_c_and_auto_c(self):
        vol, _ = self.tube()
        auto = frangi(vol, VesselnessParams(scales=(2.0,), polarity="bright"))
        fixed = frangi(vol, VesselnessParams(scales=(2.0,), c=0.05, polarity="bright"))
        assert auto.data.max() > 0 and fixed.data.max() > 0

    def test_rejects_integer_volume(self):
        with pytest.raises(ValidationError):
            frangi(Volume3(np.zeros((8, 8, 8), dtype=np.uint8)))

    def test_param_validation(self):
        with pytest.raises(ValidationError):
            VesselnessParams(scales=(2.0, 1.0)).validate()
        with pytest.raises(ValidationError):
            VesselnessParams(scales=(1.0,), alpha=0.0).validate()
        with pytest.raises(ValidationError):
            VesselnessParams(scales=(1.0,), c=-1.0).validate()
        with pytest.raises(ValidationError):
            VesselnessParams(scales=(1.0,), polarity="up").validate()
