"""
Integration tests for the pipeline orchestrator.
"""

import json

import pandas as pd
import pytest

from src.analytics.estimator import FitConfig
from src.data.dataio import MANIFEST_FILE, read_clipset
from src.data.synth_oracle import generate, preset
from src.physics.base import FamilyTag, OdeFamily, PhysIdError
from src.pipeline import PhysIdPipeline, candidate_families


@pytest.fixture
def pipeline(tmp_path):
    return PhysIdPipeline(data_dir=str(tmp_path / 'data'), output_dir=str(tmp_path / 'output'), seed=42, workers=2)


@pytest.fixture
def quick():
    return FitConfig(epochs=50, lr_params=0.05)


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob('*')) if p.is_file()}


class TestCandidates:
    """Test the candidate list a clip is scored against."""

    def test_single_body(self):
        tags = [f.tag for f in candidate_families(generate(preset('lab_led_2s'), seed=0))]
        assert FamilyTag.FALLING_BALL_RADIUS not in tags
        assert tags.index(FamilyTag.NONLINEAR_PENDULUM) < tags.index(FamilyTag.SECOND_ORDER_LINEAR)

    def test_falling_ball_adds_radius_family(self):
        spec = preset('drop_50').with_overrides(trial_count=1, split_ratio=(1, 0, 0))
        tags = [f.tag for f in candidate_families(generate(spec, seed=0))]
        assert tags[-1] is FamilyTag.FALLING_BALL_RADIUS

    def test_multi_body(self):
        spec = preset('hitting_cones').with_overrides(trial_count=1, split_ratio=(1, 0, 0)).capped(50)
        families = candidate_families(generate(spec, seed=0))
        assert families == [
            OdeFamily(FamilyTag.COUPLED_PENDULUM, 16),
            OdeFamily(FamilyTag.COUPLED_CONTACT, 16),
        ]


class TestSimulate:
    """Test clip synthesis on disk."""

    @pytest.mark.asyncio
    async def test_writes_clips_and_manifest(self, pipeline, tmp_path):
        summary = await pipeline.simulate(['lab_led_2s'])
        assert summary.ok
        clip_dir = tmp_path / 'data' / 'led' / 'lab_led_2s'
        assert summary.paths['led/lab_led_2s'] == clip_dir
        assert len(list(clip_dir.glob('trial_*.csv'))) == 5
        manifest = pd.read_csv(tmp_path / 'data' / MANIFEST_FILE)
        assert sorted(manifest['split'].value_counts().to_dict().items()) == [('test', 1), ('train', 3), ('val', 1)]

    @pytest.mark.asyncio
    async def test_same_seed_same_bytes(self, tmp_path):
        trees = []
        for name in ('a', 'b'):
            runner = PhysIdPipeline(str(tmp_path / name), str(tmp_path / f'{name}_out'), seed=7, workers=3)
            await runner.simulate(['lab_led_2s', 'pend_20'], desk_scale=True, max_samples=200)
            trees.append(tree_bytes(tmp_path / name))
        assert trees[0] == trees[1]
        assert len(trees[0]) > 2

    @pytest.mark.asyncio
    async def test_fitted_ground_truth_is_measured(self, pipeline, tmp_path):
        await pipeline.simulate(['cone_45'], desk_scale=True, max_samples=600)
        clip_dir = tmp_path / 'data' / 'sliding_cone' / 'cone_45'
        params = {p['name']: p for p in json.loads((clip_dir / 'parameters.json').read_text())[0]['params']}
        assert params['mu']['measurement_type'] == 'fitted'
        assert params['mu']['method'] == 'incline_poly_accel'
        assert params['mu']['trials'] == 10
        assert params['mu']['value'] == pytest.approx(0.2, abs=0.05)
        assert 'method' not in params['alpha_deg']
        record = read_clipset(clip_dir).spec.ground_truth_record()
        assert record.get('mu').value == params['mu']['value']

    @pytest.mark.asyncio
    async def test_unknown_preset(self, pipeline):
        with pytest.raises(PhysIdError):
            await pipeline.simulate(['no_such_preset'])


class TestFitAndReport:
    """Test fitting, evaluation, selection and the text report."""

    @pytest.mark.asyncio
    async def test_fit_without_clips(self, pipeline, quick):
        with pytest.raises(PhysIdError):
            await pipeline.fit(quick)

    @pytest.mark.asyncio
    async def test_fit_writes_results(self, pipeline, quick, tmp_path):
        await pipeline.simulate(['lab_led_2s'])
        summary = await pipeline.fit(quick, diagnostics=True)
        assert summary.ok
        results = pd.read_csv(summary.paths['results'])
        assert len(results) == 5 * 2
        assert sorted(results['param_kind'].unique()) == ['latent', 'si']
        assert (results['family'] == 'first_order_decay').all()
        diagnostics = pd.read_csv(tmp_path / 'output' / 'diagnostics.csv')
        assert len(diagnostics) == 5 * 50
        assert diagnostics['epoch'].max() == 50

    @pytest.mark.asyncio
    async def test_results_do_not_depend_on_workers(self, tmp_path, quick):
        contents = []
        for workers in (1, 4):
            runner = PhysIdPipeline(str(tmp_path / 'data'), str(tmp_path / f'out_{workers}'), seed=42, workers=workers)
            if workers == 1:
                await runner.simulate(['lab_led_2s'])
            summary = await runner.fit(quick)
            contents.append(summary.paths['results'].read_bytes())
        assert contents[0] == contents[1]

    @pytest.mark.asyncio
    async def test_evaluate_and_report(self, pipeline, quick, tmp_path):
        await pipeline.simulate(['lab_led_2s'])
        await pipeline.fit(quick)
        report, path = pipeline.evaluate()
        data = json.loads(path.read_text())
        assert path.name == 'report.json'
        scored = [(row['param_kind'], row['param_name']) for row in data['rows']]
        assert scored == [('latent', 'lambda'), ('si', 'lambda')]
        assert all(row.n_clips == 1 for row in report.rows)

        text, summary = pipeline.report()
        assert 'PHYSICS IDENTIFICATION REPORT' in text
        assert 'Amplitude correction' in text
        assert summary.paths['report_text'].read_text() == text

    @pytest.mark.asyncio
    async def test_select(self, pipeline, tmp_path):
        await pipeline.simulate(['lab_led_2s'])
        matrix, summary = await pipeline.select()
        assert summary.ok
        assert matrix.total == 5
        selection = pd.read_csv(tmp_path / 'output' / 'selection.csv')
        assert list(selection['clip']) == [0, 1, 2, 3, 4]
        assert (selection['truth'] == 'first_order_decay').all()
        confusion = json.loads((tmp_path / 'output' / 'confusion.json').read_text())
        assert sum(map(sum, confusion['counts'])) == 5


class TestSweep:
    """Test the robustness sweep outputs."""

    @pytest.mark.asyncio
    async def test_grid(self, pipeline, quick, tmp_path):
        summary = await pipeline.sweep(['lab_led_2s'], quick, ['euler'], [1, 2], [1, 2], max_samples=200)
        results = pd.read_csv(summary.paths['sweep_results'])
        assert sorted(results['seed'].unique()) == [1, 2]
        assert (tmp_path / 'output' / 'sweep_spread.csv').exists()

    @pytest.mark.asyncio
    async def test_horizon_axis(self, pipeline, quick):
        summary = await pipeline.sweep(['lab_led_2s'], quick, ['euler'], [1, 2], [42], axis='horizon')
        frame = pd.read_csv(summary.paths['horizon_summary'])
        assert set(frame['value']) == {1, 2}

    @pytest.mark.asyncio
    async def test_unknown_axis(self, pipeline, quick):
        with pytest.raises(PhysIdError):
            await pipeline.sweep(['lab_led_2s'], quick, ['euler'], [1], [42], axis='noise')


if __name__ == '__main__':
    pytest.main([__file__, '-v', '--tb=short'])
