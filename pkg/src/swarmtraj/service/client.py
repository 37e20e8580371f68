"""Thin HTTP client for a running swarmtraj service."""

from __future__ import annotations

import httpx

from .schemas import (
    CacheBuildRequest,
    CacheBuildResponse,
    GenerateRequest,
    ScenarioModel,
    SolveRequest,
    SolveResponse,
    ValidateResponse,
)


class ServiceError(RuntimeError):
    """The service rejected a request; detail carries its explanation."""

    def __init__(self, status_code: int, detail):
        self.status_code = status_code
        self.detail = detail
        super().__init__(f"service returned {status_code}: {detail}")


class ServiceClient:
    """Typed wrapper over the HTTP API; one instance per base URL."""

    def __init__(self, base_url: str, timeout: float = 300.0):
        self._client = httpx.Client(base_url=base_url, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise ServiceError(response.status_code, detail)
        return response.json()

    def health(self) -> dict:
        response = self._client.get("/health")
        response.raise_for_status()
        return response.json()

    def generate(self, request: GenerateRequest) -> ScenarioModel:
        return ScenarioModel.model_validate(self._post("/scenarios/generate", request.model_dump()))

    def validate_scenario(self, scenario: ScenarioModel) -> ValidateResponse:
        return ValidateResponse.model_validate(
            self._post("/scenarios/validate", scenario.model_dump(exclude_none=True))
        )

    def solve(self, request: SolveRequest) -> SolveResponse:
        return SolveResponse.model_validate(
            self._post("/solve", request.model_dump(exclude_none=True))
        )

    def cache_build(self, request: CacheBuildRequest) -> CacheBuildResponse:
        return CacheBuildResponse.model_validate(self._post("/cache/build", request.model_dump()))
