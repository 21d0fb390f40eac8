import logging
import os
from flask import Flask, jsonify
from dotenv import load_dotenv

from services.baselines import SCHEMES

# Load environment variables
load_dotenv()

logging.basicConfig(
    level=os.environ.get('LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s %(levelname)s %(name)s: %(message)s',
)


def create_app():
    app = Flask(__name__)
    app.config['SECRET_KEY'] = os.environ.get('SECRET_KEY', 'dev-secret-key-change-in-production')
    app.config['MAX_CONTENT_LENGTH'] = 1 * 1024 * 1024

    from routes.simulation import simulation_bp
    app.register_blueprint(simulation_bp, url_prefix='/api')

    @app.route('/')
    def index():
        """Service descriptor"""
        return jsonify({
            'service': 'relay-ofdm-allocator',
            'schemes': list(SCHEMES),
            'endpoints': ['/api/solve', '/api/trace', '/api/experiment'],
        })

    @app.errorhandler(404)
    def not_found(error):
        return jsonify({'error': 'not found'}), 404

    @app.errorhandler(500)
    def internal_error(error):
        return jsonify({'error': 'internal server error'}), 500

    return app


app = create_app()

if __name__ == '__main__':
    app.run(debug=False, host='0.0.0.0', port=int(os.environ.get('PORT', 5000)))
