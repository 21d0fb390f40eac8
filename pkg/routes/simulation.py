import logging
from flask import Blueprint, request, jsonify

from services.baselines import run_scheme
from services.channel import generate_realization
from services.experiment import ExperimentSpec, convergence_trace, run_experiment
from services.schema import NoiseModel, SolverConfig, SystemGeometry

simulation_bp = Blueprint('simulation', __name__)

MAX_API_TRIALS = 200


def _realization_from_request(data):
    """Draw the realization described by {seed, n, k, geometry?}"""
    for key in ('seed', 'n', 'k', 'pt'):
        if key not in data:
            raise ValueError(f"'{key}' is required")
    geometry = SystemGeometry(**{**data.get('geometry', {}), 'num_users': int(data['k'])})
    noise = NoiseModel(**data.get('noise', {}))
    return generate_realization(geometry, noise, int(data['n']), int(data['seed']))


@simulation_bp.route('/solve', methods=['POST'])
def solve_realization():
    """Solve one seeded realization with the requested scheme"""
    data = request.get_json(silent=True) or {}
    try:
        ch = _realization_from_request(data)
        cfg = SolverConfig.from_env(total_power=float(data['pt']))
        report = run_scheme(data.get('scheme', 'proposed'), ch, cfg)
        return jsonify(report.model_dump())
    except ValueError as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logging.error(f"Solve failed: {e}")
        return jsonify({'error': str(e)}), 500


@simulation_bp.route('/trace', methods=['POST'])
def trace_realization():
    """Per-iteration telemetry of the dual solver"""
    data = request.get_json(silent=True) or {}
    try:
        ch = _realization_from_request(data)
        cfg = SolverConfig.from_env(total_power=float(data['pt']))
        rows = convergence_trace(ch, cfg)
        return jsonify({'trace': [row.model_dump(by_alias=True) for row in rows]})
    except ValueError as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logging.error(f"Trace failed: {e}")
        return jsonify({'error': str(e)}), 500


@simulation_bp.route('/experiment', methods=['POST'])
def experiment():
    """Small Monte Carlo sweep; large runs belong on the command line"""
    data = request.get_json(silent=True) or {}
    try:
        spec = ExperimentSpec(**data)
        if spec.trials > MAX_API_TRIALS:
            return jsonify({'error': f'trials is limited to {MAX_API_TRIALS} over HTTP'}), 400
        rows = run_experiment(spec)
        return jsonify({'rows': [row.model_dump() for row in rows]})
    except ValueError as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logging.error(f"Experiment failed: {e}")
        return jsonify({'error': str(e)}), 500
