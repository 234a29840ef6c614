from flask import Blueprint, request, jsonify
from flask.wrappers import Response as FlaskResponse
from marshmallow import ValidationError

from ..errors import TbqkdError
from ..schemas.record_schemas import FriedRequestSchema, KeyRateRequestSchema, TomographyRequestSchema
from ..services.atmos_characterization import r0_series, summarize_turbulence
from ..services.key_distillation import evaluate_key_rate
from ..services.polarization_tomography import reconstruct_series
from ..store.run_store import delete_run, get_all_runs, get_run_by_id

qkd_bp = Blueprint('qkd_bp', __name__, url_prefix='/qkd')


def _json_body():
    if not request.is_json:
        return None, (jsonify({"message": "Request must be JSON"}), 400)
    return request.get_json(), None


@qkd_bp.route('/keyrate', methods=['POST'])
def keyrate_route() -> FlaskResponse:
    """
    Decoy bounds and asymptotic key rate for the posted calculator inputs.
    Omitted fields take the turbulent-run defaults.
    """
    data, error = _json_body()
    if error:
        return error
    try:
        config = KeyRateRequestSchema().load(data)
        evaluation = evaluate_key_rate(config)
    except ValidationError as err:
        return jsonify({"message": "Invalid key-rate request", "validation_errors": err.messages}), 400
    except TbqkdError as e:
        return jsonify({"message": str(e), "validation_errors": {}}), 400
    return jsonify(evaluation.as_dict()), 200


@qkd_bp.route('/tomography', methods=['POST'])
def tomography_route() -> FlaskResponse:
    """
    Maximum-likelihood reconstruction of each posted count row.
    """
    data, error = _json_body()
    if error:
        return error
    try:
        counts = TomographyRequestSchema().load(data)["counts"]
    except ValidationError as err:
        return jsonify({"message": "Invalid tomography request", "validation_errors": err.messages}), 400
    rows = [{"second": int(row["second"]), "purity": float(row["purity"]), "qber_pol": float(row["qber_pol"]),
             "stokes": [float(v) for v in row["stokes"]], "converged": bool(row["converged"])}
            for row in reconstruct_series(counts)]
    return jsonify({"rows": rows, "count": len(rows)}), 200


@qkd_bp.route('/fried', methods=['POST'])
def fried_route() -> FlaskResponse:
    """
    Per-block r0 estimates, their spread and the Cn2 of the mean r0.
    """
    data, error = _json_body()
    if error:
        return error
    try:
        body = FriedRequestSchema().load(data)
    except ValidationError as err:
        return jsonify({"message": "Invalid r0 request", "validation_errors": err.messages}), 400
    estimates = r0_series(body["centroids"], body["frames_per_estimate"], body["aperture"], body["wavelength"])
    summary = summarize_turbulence(estimates, body["wavelength"], body["distance"])
    return jsonify({
        "estimates": [{"second": e.second_index, "r0": e.r0, "sigma2": e.sigma2_2axis,
                       "n_frames": e.n_frames, "degenerate": e.degenerate} for e in estimates],
        "summary": summary.as_dict(),
    }), 200


@qkd_bp.route('/runs', methods=['GET'])
def get_runs_route() -> FlaskResponse:
    """
    Lists archived analysis runs without their per-second rows.
    """
    runs = get_all_runs()
    return jsonify({"runs": [run.to_dict() for run in runs], "count": len(runs)}), 200


@qkd_bp.route('/runs/<int:run_id>', methods=['GET'])
def get_run_route(run_id: int) -> FlaskResponse:
    """
    Retrieves an archived run with its per-second rows.

    Args:
        run_id: The ID of the run to retrieve.
    """
    run = get_run_by_id(run_id)
    if run:
        return jsonify(run.to_dict(include_seconds=True)), 200
    return jsonify({"message": f"Run with ID {run_id} not found."}), 404


@qkd_bp.route('/runs/<int:run_id>', methods=['DELETE'])
def delete_run_route(run_id: int) -> FlaskResponse:
    """
    Deletes an archived run.

    Args:
        run_id: The ID of the run to delete.
    """
    if delete_run(run_id):
        return jsonify({"message": f"Run with ID {run_id} deleted successfully."}), 200
    return jsonify({"message": f"Run with ID {run_id} not found."}), 404
