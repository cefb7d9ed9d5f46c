import numpy as np
from dotenv import load_dotenv
from flask import Flask, jsonify, request
from flask_cors import CORS

from services.auction import Bid, ScoringWeights, select_winners_exact, select_winners_greedy
from services.fedsim import run_simulation
from services.hedonic import pop
from services.preference import PreferenceProfile
from utils.config import config_from_mapping, load_defaults
from utils.errors import DualGFLError
from utils.logger import get_logger

# Load environment variables
load_dotenv(override=True)

logger = get_logger(__name__)

app = Flask(__name__)
CORS(app)  # Enable CORS for all routes

MAX_SIMULATED_ROUNDS = 200


def _json_body() -> dict:
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        raise ValueError("Request body must be a JSON object")
    return data


@app.route('/config/defaults', methods=['GET'])
def config_defaults():
    """
    Endpoint returning every config key with its default value
    Returns: JSON object of defaults
    """
    try:
        return jsonify({'success': True, 'config': config_from_mapping(load_defaults()).to_dict()}), 200
    except Exception as e:
        return jsonify({'error': f'An error occurred: {str(e)}'}), 500


@app.route('/simulate', methods=['POST'])
def simulate():
    """
    Endpoint to run one simulation
    Expects: JSON body of config overrides, e.g. {"method": "fedavghed", "rounds": 5}
    Returns: per-round metric rows and the final cumulative averages
    """
    try:
        config = config_from_mapping(_json_body())
        if config.rounds > MAX_SIMULATED_ROUNDS:
            return jsonify({'error': f'rounds must be <= {MAX_SIMULATED_ROUNDS} over HTTP'}), 400
        log = run_simulation(config)
        return jsonify({
            'success': True,
            'method': config.method,
            'seed': config.seed,
            'rows': log.rows(),
            'final': log.final(),
        }), 200

    except (DualGFLError, ValueError) as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logger.exception("simulation failed")
        return jsonify({'error': f'An error occurred: {str(e)}'}), 500


@app.route('/partition', methods=['POST'])
def partition():
    """
    Endpoint to run POP on explicit preference profiles
    Expects: JSON body {"servers": [0, 1], "capacity": 2, "seed": 0,
             "profiles": {"0": [[1], [0]], ...}} where each profile lists indifference classes best first
    Returns: JSON map server id -> sorted member ids
    """
    try:
        data = _json_body()
        if 'profiles' not in data or 'servers' not in data or 'capacity' not in data:
            return jsonify({'error': 'profiles, servers and capacity are required'}), 400
        profiles = {int(i): PreferenceProfile.from_lists(int(i), classes) for i, classes in data['profiles'].items()}
        servers = [int(s) for s in data['servers']]
        rng = np.random.default_rng(int(data.get('seed', 0)))
        stats = {}
        result = pop(sorted(profiles), servers, profiles, int(data['capacity']), rng, stats=stats)
        return jsonify({'success': True, 'partition': result.to_json(), 'refinements': stats['iterations']}), 200

    except (DualGFLError, ValueError, KeyError) as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logger.exception("partitioning failed")
        return jsonify({'error': f'An error occurred: {str(e)}'}), 500


@app.route('/auction', methods=['POST'])
def auction():
    """
    Endpoint to run winner selection on a bid fixture
    Expects: JSON body {"weights": [1.0], "winners": 2, "budget": 10.0,
             "bids": [{"coalition": 0, "price": 1.0, "qualities": [3.0], "resource": 2.0}, ...]}
    Returns: greedy and exact outcomes
    """
    try:
        data = _json_body()
        if 'bids' not in data or 'winners' not in data or 'budget' not in data:
            return jsonify({'error': 'bids, winners and budget are required'}), 400
        weights = ScoringWeights(tuple(float(a) for a in data.get('weights', [1.0])))
        bids = [Bid.from_dict(b) for b in data['bids']]
        winners, budget = int(data['winners']), float(data['budget'])
        greedy = select_winners_greedy(bids, weights, winners, budget).to_dict()
        exact = select_winners_exact(bids, weights, winners, budget).to_dict()
        return jsonify({'success': True, 'greedy': greedy, 'exact': exact}), 200

    except (DualGFLError, ValueError, KeyError) as e:
        return jsonify({'error': str(e)}), 400
    except Exception as e:
        logger.exception("auction failed")
        return jsonify({'error': f'An error occurred: {str(e)}'}), 500


if __name__ == '__main__':
    app.run(debug=True, host='0.0.0.0', port=5099)
