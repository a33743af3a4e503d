"""Privacy-preserving k-nearest-neighbour classification over Paillier-encrypted data."""

from .pipeline import (
    ClassificationResult,
    EncryptedDatabase,
    EncryptedQuery,
    EncryptedRecord,
    Mode,
    PlainRecord,
    classify,
    deliver_result,
    encrypt_database,
    encrypt_query,
    majority_label,
)
from .paillier import (
    Ciphertext,
    PublicKey,
    SecretKey,
    decrypt,
    encrypt,
    homomorphic_add,
    keygen,
    rerandomize,
    scalar_exp,
)
from .protocols import DataHost, KeyHolder, ProtocolConfig, Tournament, local_parties
from .runtime import Endpoint, PartyRole, ProtocolMessage, ProtocolTag, Session

__version__ = "0.1.0"
