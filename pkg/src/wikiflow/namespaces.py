"""Well-known namespace IRIs and the default prefix table."""

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
XSD = "http://www.w3.org/2001/XMLSchema#"

# Vocabulary used to mirror workflow state into the triple store.
PM = "http://wikiflow.example/model#"

# Default base for minted page/process IRIs; overridable per deployment.
DEFAULT_BASE_IRI = "http://wikiflow.example/"

RDF_TYPE = RDF + "type"
RDFS_SUBCLASSOF = RDFS + "subClassOf"

PM_PROCESS_DEFINITION = PM + "ProcessDefinition"
PM_PROCESS_INSTANCE = PM + "ProcessInstance"
PM_TASK_INSTANCE = PM + "TaskInstance"
PM_NODE = PM + "Node"
PM_TRANSITION = PM + "Transition"
PM_SWIMLANE = PM + "Swimlane"
PM_USER = PM + "User"

PM_HAS_NODE = PM + "hasNode"
PM_HAS_TRANSITION = PM + "hasTransition"
PM_HAS_SWIMLANE = PM + "hasSwimlane"
PM_IN_SWIMLANE = PM + "inSwimlane"
PM_FROM = PM + "from"
PM_TO = PM + "to"
PM_NAME = PM + "name"
PM_VERSION = PM + "version"
PM_KIND = PM + "kind"
PM_HAS_ROLE = PM + "hasRole"
PM_OF_DEFINITION = PM + "ofDefinition"
PM_OF_INSTANCE = PM + "ofInstance"
PM_OF_NODE = PM + "ofNode"
PM_STATE = PM + "state"
PM_ASSIGNEE = PM + "assignee"
PM_ABOUT = PM + "about"
PM_ANNOTATION = PM + "annotation"

SPARQL_RESULTS_NS = "http://www.w3.org/2005/sparql-results#"

DEFAULT_PREFIXES = {
    "rdf": RDF,
    "rdfs": RDFS,
    "xsd": XSD,
    "pm": PM,
}
