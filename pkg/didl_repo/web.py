"""HTTP surface: every service of the environment as a Flask blueprint.

    /repo/<tape>   autonomous OAI-PMH repository, one per XMLtape
    /index         Repository Index (OAI-PMH)
    /locator?id=   Identifier Locator lookup (JSON)
    /federator     OAI-PMH Federator
    /openurl       OpenURL Resolver (KEV over GET)

Each blueprint is registered only when its service is enabled, so a process can serve any
subset and reach the rest over HTTP.
"""

import logging
from typing import Iterable

from flask import Blueprint, Flask, Response, abort, current_app, jsonify, request

from .dip import DipError
from .locator import LocatorError, NotFound
from .oaipmh import Engine, SourceUnavailable
from .openurl import OpenUrlError, parse_kev, status_for

logger = logging.getLogger(__name__)

OAI_CONTENT_TYPE = "text/xml; charset=utf-8"
EXTENSION = "didl_repo"


def _env():
    return current_app.extensions[EXTENSION]


def _oai(source) -> Response:
    env = _env()
    engine = Engine(source, env.config.page_size, env.clock)
    try:
        body = engine.handle(request.values.items(multi=True))
    except SourceUnavailable as e:
        logger.warning(f"{request.path} unavailable: {e}")
        response = Response(str(e), status=503, mimetype="text/plain")
        response.headers["Retry-After"] = str(e.retry_after)
        return response
    return Response(body, status=200, content_type=OAI_CONTENT_TYPE)


repo_blueprint = Blueprint("repo", __name__)


@repo_blueprint.route("/repo/<tape_name>", methods=["GET", "POST"])
def repository(tape_name):
    env = _env()
    if env.find_tape(tape_name) is None:
        abort(404)
    return _oai(env.repository_source(tape_name))


index_blueprint = Blueprint("index", __name__)


@index_blueprint.route("/index", methods=["GET", "POST"])
def repository_index():
    return _oai(_env().index_source())


federator_blueprint = Blueprint("federator", __name__)


@federator_blueprint.route("/federator", methods=["GET", "POST"])
def federator():
    return _oai(_env().federator)


locator_blueprint = Blueprint("locator", __name__)


@locator_blueprint.route("/locator", methods=["GET"])
def locate():
    identifier = request.args.get("id", "").strip()
    if not identifier:
        return jsonify({"error": "missing id parameter"}), 400
    try:
        plans = _env().locator_store.resolve(identifier)
    except NotFound:
        return jsonify({"identifier": identifier, "error": "not found"}), 404
    except LocatorError as e:
        logger.error(f"Lookup of {identifier} failed: {e}")
        return jsonify({"identifier": identifier, "error": str(e)}), 500
    return jsonify({"identifier": identifier, "plans": [p.to_dict() for p in plans]})


openurl_blueprint = Blueprint("openurl", __name__)


@openurl_blueprint.route("/openurl", methods=["GET"])
def openurl():
    env = _env()
    try:
        ctx = parse_kev(request.args.items(multi=True))
        result = env.resolver.resolve(ctx)
    except (OpenUrlError, DipError, LocatorError) as e:
        status = status_for(e)
        logger.info(f"OpenURL request failed with {status}: {e}")
        return Response(f"{type(e).__name__}: {e}\n", status=status, mimetype="text/plain")
    return Response(result.data, status=result.status, content_type=result.mime_type)


BLUEPRINTS = {
    "repo": repo_blueprint,
    "index": index_blueprint,
    "locator": locator_blueprint,
    "federator": federator_blueprint,
    "openurl": openurl_blueprint,
}


def create_app(env, services: Iterable[str] = tuple(BLUEPRINTS)) -> Flask:
    app = Flask(__name__)
    app.extensions[EXTENSION] = env
    for name in services:
        if name not in BLUEPRINTS:
            raise ValueError(f"Unknown service {name!r}; choose from {', '.join(BLUEPRINTS)}")
        app.register_blueprint(BLUEPRINTS[name])
    return app
