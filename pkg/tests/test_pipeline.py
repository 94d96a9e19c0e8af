import numpy as np
import pytest

from voxlight.pipeline import DemoConfig, pipeline_demo
from voxlight.scene import SceneSpec


def tiny_config():
    return DemoConfig(
        scene=SceneSpec(image_width=32, image_height=24, env_width=8,
                        env_height=4, num_views=3, env_supersample=2),
        cluster_size=8, sg_iters=200, vsg_dims=(4, 4, 4), vsg_iters=120,
        vsg_samples=16, vsg_grid=2, shadow_dirs=(4, 8), insert_samples=8,
        feature_stride=8, sphere_radius=0.3)


@pytest.fixture(scope="module")
def tiny_report():
    return pipeline_demo(tiny_config())


class TestPipelineDemo:
    def test_metrics_present_and_finite(self, tiny_report):
        m = tiny_report.metrics
        for key in ("normal_g1", "lighting_g4", "rerender_g3", "vsg_objective",
                    "L_normal", "L_InDL", "L_BRDF", "L_SVL", "tau_diff"):
            assert key in m
            assert np.isfinite(float(m[key]))

    def test_normals_accurate_on_analytic_plane(self, tiny_report):
        assert tiny_report.metrics["normal_g1"] <= 0.01

    def test_artifact_shapes(self, tiny_report):
        r = tiny_report
        assert r.normal_map.shape == (24, 32, 3)
        assert r.fitted_envs.shape == (24, 32, 4, 8, 3)
        assert r.rerendered.shape == (24, 32, 3)
        assert r.inserted.shape == (24, 32, 3)
        assert r.volume.dims == (4, 4, 4)
        assert r.surface_volume.dims == (4, 4, 4)
        assert np.all(r.inserted >= 0.0)

    def test_deterministic_rerun(self, tiny_report):
        again = pipeline_demo(tiny_config())
        assert again.digest == tiny_report.digest
        for key in ("normal_g1", "lighting_g4", "rerender_g3"):
            assert again.metrics[key] == tiny_report.metrics[key]
