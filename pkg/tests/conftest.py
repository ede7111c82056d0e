import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wikiflow.namespaces import PM
from wikiflow.store import TripleStore

EX = "http://example.org/ns#"

TAXONOMY_LINES = """
@prefix ex: <http://example.org/ns#> .
ex:Ascomycota rdfs:subClassOf ex:Fungi .
ex:Basidiomycota rdfs:subClassOf ex:Fungi .
ex:Morchella rdfs:subClassOf ex:Ascomycota .
ex:MorchellaEsculenta rdfs:subClassOf ex:Morchella .
ex:Boletus rdfs:subClassOf ex:Basidiomycota .
ex:Amanita rdfs:subClassOf ex:Basidiomycota .
ex:alice rdf:type pm:User .
ex:bob rdf:type pm:User .
ex:carol rdf:type pm:User .
ex:dana rdf:type pm:User .
ex:alice pm:hasRole ex:FieldWorkParticipantRole .
ex:bob pm:hasRole ex:TaxonomistRole .
ex:carol pm:hasRole ex:CuratorRole .
ex:dana pm:hasRole ex:CuratorRole .
ex:carol ex:responsibleFor ex:Ascomycota .
ex:dana ex:responsibleFor ex:Basidiomycota .
"""


@pytest.fixture
def taxonomy_store() -> TripleStore:
    store = TripleStore()
    store.load_text(TAXONOMY_LINES)
    return store


@pytest.fixture
def ex():
    from wikiflow.store import iri

    def make(local: str):
        return iri(EX + local)

    return make


@pytest.fixture
def pm():
    from wikiflow.store import iri

    def make(local: str):
        return iri(PM + local)

    return make
