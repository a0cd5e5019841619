"""Retrieval-augmented market research.

Keyword generation, a pluggable web-search client (SERP-style HTTP or a
deterministic mock), result filtering, and LLM synthesis into a quantitative
market report. The whole chain is optional: when retrieval is disabled the
pipeline substitutes an explicit no-knowledge marker and keeps going.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Sequence

import requests

from ssff import prompts
from ssff.llm_gateway import (
    ChatRequest,
    Gateway,
    GatewayTimeout,
    TransportError,
    render,
)

NO_KNOWLEDGE_MARKER = "No external knowledge available."

MAX_KEYWORDS = 8
MAX_KEYWORD_WORDS = 10


class EmptyKeywords(ValueError):
    pass


class EmptyResults(ValueError):
    pass


class QuotaExceeded(Exception):
    pass


@dataclass(frozen=True)
class KeywordSet:
    """An ordered batch of short search phrases."""

    keywords: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "keywords", tuple(self.keywords))
        if not self.keywords:
            raise EmptyKeywords("keyword set is empty")
        if len(self.keywords) > MAX_KEYWORDS:
            raise ValueError(f"at most {MAX_KEYWORDS} keywords allowed")
        for phrase in self.keywords:
            if len(phrase.split()) > MAX_KEYWORD_WORDS:
                raise ValueError(f"keyword too long: {phrase!r}")

    def __iter__(self):
        return iter(self.keywords)

    def joined(self) -> str:
        return ", ".join(self.keywords)


@dataclass(frozen=True)
class SearchResult:
    title: str
    url: str
    snippet: str
    source_rank: int
    retrieved_at: str
    query: str = ""

    def __post_init__(self) -> None:
        if not self.url.startswith(("http://", "https://")):
            raise ValueError(f"malformed url: {self.url!r}")
        if self.source_rank < 1:
            raise ValueError("source_rank must be >= 1")


@dataclass(frozen=True)
class KnowledgeConfig:
    """Retrieval settings; n_results of 3 and 10 are the reference settings."""

    n_results: int = 10
    blocklist: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.n_results < 1:
            raise ValueError("n_results must be >= 1")
        object.__setattr__(self, "blocklist", tuple(self.blocklist))


@dataclass(frozen=True)
class MarketResearchReport:
    """Synthesized market text, extracted quantitative points, contributing URLs."""

    text: str
    quantitative_points: tuple[str, ...]
    citations: tuple[str, ...]


def generate_keywords(
    description: str,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
) -> KeywordSet:
    """Ask the model for search keywords; deduplicate case-insensitively."""
    if not description.strip():
        raise ValueError("description must be non-empty")
    response = gateway.complete(
        ChatRequest(
            system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
            user_prompt=render(prompts.KEYWORD_GENERATION, {"description": description}),
            model_id=model_id,
        )
    )
    phrases: list[str] = []
    seen: set[str] = set()
    for chunk in re.split(r"[,\n;]+", response):
        phrase = chunk.strip().strip("-*").strip()
        if not phrase or len(phrase.split()) > MAX_KEYWORD_WORDS:
            continue
        key = phrase.lower()
        if key in seen:
            continue
        seen.add(key)
        phrases.append(phrase)
        if len(phrases) == MAX_KEYWORDS:
            break
    if not phrases:
        raise EmptyKeywords(f"no keywords parsed from response: {response[:120]!r}")
    return KeywordSet(keywords=tuple(phrases))


# ---------------------------------------------------------------------------
# Search clients
# ---------------------------------------------------------------------------


@dataclass
class HttpSearchClient:
    """SERP-style HTTP search: query, num, api_key -> organic results array."""

    base_url: str
    api_key: str = ""
    timeout: float = 30.0

    def search(self, query: str, n_results: int) -> list[SearchResult]:
        params = {"q": query, "num": n_results, "engine": "google"}
        if self.api_key:
            params["api_key"] = self.api_key
        try:
            response = requests.get(self.base_url, params=params, timeout=self.timeout)
        except requests.exceptions.Timeout as exc:
            raise GatewayTimeout(str(exc)) from exc
        except requests.exceptions.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code == 429:
            raise QuotaExceeded(response.text[:200])
        if response.status_code >= 400:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        data = response.json()
        results = []
        for item in data.get("organic_results", []):
            try:
                results.append(
                    SearchResult(
                        title=str(item.get("title", "")),
                        url=str(item.get("link", "")),
                        snippet=str(item.get("snippet", "")),
                        source_rank=int(item.get("position", len(results) + 1)),
                        retrieved_at=str(data.get("search_metadata", {}).get("created_at", "")),
                    )
                )
            except ValueError:
                continue
        return results


# Fixed timestamp keeps mock runs byte-reproducible.
_MOCK_RETRIEVED_AT = "2024-01-01T00:00:00Z"


@dataclass
class MockSearchClient:
    """Deterministic offline search results derived from the query text."""

    seed: int = 0
    results_per_query: int = 5
    canned: Sequence[SearchResult] | None = None

    def search(self, query: str, n_results: int) -> list[SearchResult]:
        if self.canned is not None:
            return list(self.canned)[:n_results]
        slug = re.sub(r"[^a-z0-9]+", "-", query.lower()).strip("-") or "query"
        digest = int.from_bytes(
            hashlib.sha256(f"{self.seed}|search|{query}".encode()).digest()[:8], "big"
        )
        results = []
        for i in range(min(self.results_per_query, n_results)):
            size = round(0.5 + ((digest >> (4 * i)) % 80) / 8.0, 1)
            growth = 2 + (digest >> (3 * i)) % 25
            results.append(
                SearchResult(
                    title=f"Report {i + 1} on {query}",
                    url=f"https://example.com/{slug}/{i + 1}",
                    snippet=(
                        f"Analysts estimate the {query} segment at ${size} billion, "
                        f"growing at {growth}% annually."
                    ),
                    source_rank=i + 1,
                    retrieved_at=_MOCK_RETRIEVED_AT,
                )
            )
        return results


def search(client, keywords: KeywordSet, n_results: int = 10) -> list[SearchResult]:
    """One query per keyword; per-keyword truncation to n_results; rank preserved."""
    merged: list[SearchResult] = []
    for keyword in keywords:
        batch = sorted(client.search(keyword, n_results), key=lambda r: r.source_rank)
        for result in batch[:n_results]:
            merged.append(
                SearchResult(
                    title=result.title,
                    url=result.url,
                    snippet=result.snippet,
                    source_rank=result.source_rank,
                    retrieved_at=result.retrieved_at,
                    query=keyword,
                )
            )
    return merged


def filter_results(
    results: Sequence[SearchResult], blocklist: Sequence[str] = ()
) -> list[SearchResult]:
    """Drop empty snippets, blocklisted domains, and duplicate URLs.

    For a duplicated URL the survivor is the occurrence with the lowest
    source rank; order is otherwise stable. Idempotent.
    """
    blocked = tuple(blocklist)
    kept: dict[str, SearchResult] = {}
    order: list[str] = []
    for result in results:
        if not result.snippet.strip():
            continue
        if any(domain in result.url for domain in blocked):
            continue
        if result.url not in kept:
            kept[result.url] = result
            order.append(result.url)
        elif result.source_rank < kept[result.url].source_rank:
            kept[result.url] = result
    return [kept[url] for url in order]


_QUANT_PATTERNS = (
    ("usd", re.compile(r"\$\s?[\d][\d,.]*\s*(?:billion|million|trillion|bn|m|k)?", re.IGNORECASE)),
    ("cagr", re.compile(r"CAGR[^.;\n]*", re.IGNORECASE)),
    ("percent", re.compile(r"\b\d+(?:\.\d+)?\s?%")),
)


def _extract_quant_points(text: str) -> tuple[str, ...]:
    points: list[str] = []
    seen: set[str] = set()
    for label, pattern in _QUANT_PATTERNS:
        for match in pattern.findall(text):
            cleaned = " ".join(match.split())
            entry = f"{label}: {cleaned}"
            if entry not in seen:
                seen.add(entry)
                points.append(entry)
    return tuple(points)


def synthesize(
    results: Sequence[SearchResult],
    startup_context: str,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
) -> MarketResearchReport:
    """Distill search snippets into a quantitative market report with citations."""
    if not results:
        raise EmptyResults("cannot synthesize an empty result list")
    blocks = []
    for result in results:
        blocks.append(f"[{result.source_rank}] {result.title} ({result.url})\n{result.snippet}")
    text = gateway.complete(
        ChatRequest(
            system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
            user_prompt=render(
                prompts.MARKET_SYNTHESIS,
                {"startup_context": startup_context, "search_results": "\n\n".join(blocks)},
            ),
            model_id=model_id,
        )
    )
    citations = []
    for result in results:
        if result.url not in citations:
            citations.append(result.url)
    return MarketResearchReport(
        text=text,
        quantitative_points=_extract_quant_points(text),
        citations=tuple(citations),
    )


def research(
    description: str,
    gateway: Gateway,
    client,
    config: KnowledgeConfig = KnowledgeConfig(),
    model_id: str = "gpt-4o-mini",
) -> tuple[KeywordSet, list[SearchResult], MarketResearchReport]:
    """The full chain: keywords -> search -> filter -> synthesize."""
    keywords = generate_keywords(description, gateway, model_id=model_id)
    raw = search(client, keywords, n_results=config.n_results)
    filtered = filter_results(raw, blocklist=config.blocklist)
    report = synthesize(filtered, description, gateway, model_id=model_id)
    return keywords, filtered, report
