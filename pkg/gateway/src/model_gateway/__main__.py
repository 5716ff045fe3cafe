"""Run the gateway: `model-gateway --config gateway.json`."""

from __future__ import annotations

import argparse
import sys

from .adapters import AdapterLoadError, load_adapter
from .config import ConfigError, GatewayConfig
from .server import create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="model-gateway", description=__doc__)
    parser.add_argument("--config", required=True, help="GatewayConfig JSON file")
    args = parser.parse_args(argv)
    try:
        config = GatewayConfig.from_file(args.config)
        # Load every configured model up front so a bad checkpoint is a
        # diagnostic exit, not a half-started server.
        adapters = {
            endpoint: load_adapter(endpoint, identifier, config.device)
            for endpoint, identifier in config.models.items()
        }
        app = create_app(config, adapters)
    except (ConfigError, AdapterLoadError) as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
