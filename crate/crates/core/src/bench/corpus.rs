//! Synthetic dialogue corpus. Every dialogue opens on its own topic and
//! continues with generic follow-ups ("What are its key features?") whose
//! meaning depends on that opening.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dialogue;
use crate::turn::Turn;

/// Seed used for the bundled `data/dialogues.jsonl`.
pub const CORPUS_SEED: u64 = 2024;

const TOPICS: &[(&str, &str)] = &[
    ("a relational database", "data management"),
    ("cloud computing", "distributed infrastructure"),
    ("a hash table", "data structures"),
    ("a binary search tree", "data structures"),
    ("a linked list", "data structures"),
    ("a priority queue", "data structures"),
    ("a bloom filter", "probabilistic data structures"),
    ("a skip list", "data structures"),
    ("a trie", "string processing"),
    ("a graph database", "data management"),
    ("a document store", "data management"),
    ("a columnar database", "analytics"),
    ("a data warehouse", "analytics"),
    ("a data lake", "analytics"),
    ("stream processing", "data engineering"),
    ("batch processing", "data engineering"),
    ("an ETL pipeline", "data engineering"),
    ("a message queue", "distributed systems"),
    ("the publish subscribe pattern", "distributed systems"),
    ("event sourcing", "software architecture"),
    ("a microservice architecture", "software architecture"),
    ("a monolithic architecture", "software architecture"),
    ("serverless computing", "cloud platforms"),
    ("container orchestration", "cloud platforms"),
    ("a virtual machine", "virtualization"),
    ("a hypervisor", "virtualization"),
    ("a load balancer", "networking"),
    ("a reverse proxy", "networking"),
    ("a content delivery network", "networking"),
    ("the domain name system", "networking"),
    ("the TCP protocol", "networking"),
    ("the UDP protocol", "networking"),
    ("the HTTP protocol", "web technology"),
    ("a REST API", "web technology"),
    ("GraphQL", "web technology"),
    ("WebSockets", "web technology"),
    ("a single page application", "web technology"),
    ("server side rendering", "web technology"),
    ("a web browser engine", "web technology"),
    ("public key cryptography", "security"),
    ("symmetric encryption", "security"),
    ("a digital signature", "security"),
    ("a certificate authority", "security"),
    ("two factor authentication", "security"),
    ("a firewall", "security"),
    ("a virtual private network", "security"),
    ("zero trust security", "security"),
    ("a password manager", "security"),
    ("a hash function", "cryptography"),
    ("a blockchain", "distributed ledgers"),
    ("a smart contract", "distributed ledgers"),
    ("consensus algorithms", "distributed systems"),
    ("the CAP theorem", "distributed systems"),
    ("eventual consistency", "distributed systems"),
    ("database sharding", "data management"),
    ("database replication", "data management"),
    ("database indexing", "data management"),
    ("query optimization", "data management"),
    ("transaction isolation", "data management"),
    ("a write ahead log", "storage engines"),
    ("a log structured merge tree", "storage engines"),
    ("a B tree", "storage engines"),
    ("garbage collection", "programming languages"),
    ("reference counting", "programming languages"),
    ("a compiler", "programming languages"),
    ("an interpreter", "programming languages"),
    ("just in time compilation", "programming languages"),
    ("static typing", "programming languages"),
    ("functional programming", "programming paradigms"),
    ("object oriented programming", "programming paradigms"),
    ("reactive programming", "programming paradigms"),
    ("a closure", "programming languages"),
    ("recursion", "algorithms"),
    ("dynamic programming", "algorithms"),
    ("a greedy algorithm", "algorithms"),
    ("divide and conquer", "algorithms"),
    ("quicksort", "algorithms"),
    ("merge sort", "algorithms"),
    ("binary search", "algorithms"),
    ("breadth first search", "graph algorithms"),
    ("Dijkstra shortest paths", "graph algorithms"),
    ("a minimum spanning tree", "graph algorithms"),
    ("big O notation", "complexity theory"),
    ("NP completeness", "complexity theory"),
    ("a Turing machine", "theory of computation"),
    ("a finite state machine", "theory of computation"),
    ("regular expressions", "text processing"),
    ("version control", "software engineering"),
    ("continuous integration", "software engineering"),
    ("unit testing", "software engineering"),
    ("test driven development", "software engineering"),
    ("code review", "software engineering"),
    ("technical debt", "software engineering"),
    ("agile development", "project management"),
    ("the scrum framework", "project management"),
    ("a kanban board", "project management"),
    ("an operating system kernel", "operating systems"),
    ("virtual memory", "operating systems"),
    ("a process scheduler", "operating systems"),
    ("a file system", "operating systems"),
    ("a thread pool", "concurrency"),
    ("a mutex", "concurrency"),
    ("a deadlock", "concurrency"),
    ("async await", "concurrency"),
    ("an actor model", "concurrency"),
    ("a GPU", "computer hardware"),
    ("a CPU cache", "computer hardware"),
    ("a solid state drive", "computer hardware"),
    ("RAID storage", "computer hardware"),
    ("a neural network", "machine learning"),
    ("a convolutional neural network", "machine learning"),
    ("a recurrent neural network", "machine learning"),
    ("the transformer architecture", "machine learning"),
    ("an attention mechanism", "machine learning"),
    ("gradient descent", "machine learning"),
    ("backpropagation", "machine learning"),
    ("overfitting", "machine learning"),
    ("regularization", "machine learning"),
    ("a decision tree", "machine learning"),
    ("a random forest", "machine learning"),
    ("gradient boosting", "machine learning"),
    ("a support vector machine", "machine learning"),
    ("k means clustering", "machine learning"),
    ("principal component analysis", "statistics"),
    ("reinforcement learning", "machine learning"),
    ("transfer learning", "machine learning"),
    ("a large language model", "natural language processing"),
    ("word embeddings", "natural language processing"),
    ("tokenization", "natural language processing"),
    ("sentiment analysis", "natural language processing"),
    ("machine translation", "natural language processing"),
    ("speech recognition", "signal processing"),
    ("computer vision", "artificial intelligence"),
    ("object detection", "computer vision"),
    ("a recommender system", "information retrieval"),
    ("a search engine", "information retrieval"),
    ("an inverted index", "information retrieval"),
    ("vector search", "information retrieval"),
    ("a semantic cache", "information retrieval"),
    ("A B testing", "experimentation"),
    ("linear regression", "statistics"),
    ("logistic regression", "statistics"),
    ("Bayesian inference", "statistics"),
    ("hypothesis testing", "statistics"),
    ("a confidence interval", "statistics"),
    ("the central limit theorem", "probability"),
    ("a Markov chain", "probability"),
    ("Monte Carlo simulation", "numerical methods"),
    ("the Fourier transform", "signal processing"),
    ("linear algebra", "mathematics"),
    ("eigenvalues", "mathematics"),
    ("calculus", "mathematics"),
    ("number theory", "mathematics"),
    ("graph theory", "mathematics"),
    ("game theory", "economics"),
    ("supply and demand", "economics"),
    ("inflation", "economics"),
    ("compound interest", "personal finance"),
    ("an index fund", "personal finance"),
    ("a stock exchange", "finance"),
    ("a bond", "finance"),
    ("cryptocurrency", "finance"),
    ("double entry bookkeeping", "accounting"),
    ("photosynthesis", "biology"),
    ("DNA replication", "biology"),
    ("the immune system", "biology"),
    ("natural selection", "biology"),
    ("a vaccine", "medicine"),
    ("antibiotic resistance", "medicine"),
    ("the circulatory system", "physiology"),
    ("plate tectonics", "geology"),
    ("the water cycle", "earth science"),
    ("climate change", "earth science"),
    ("a black hole", "astronomy"),
    ("the big bang theory", "cosmology"),
    ("a neutron star", "astronomy"),
    ("general relativity", "physics"),
    ("quantum entanglement", "physics"),
    ("superconductivity", "physics"),
    ("nuclear fusion", "physics"),
    ("solar power", "energy"),
    ("wind turbines", "energy"),
    ("a lithium ion battery", "energy storage"),
    ("an electric vehicle", "transportation"),
    ("a jet engine", "aerospace"),
    ("a 3D printer", "manufacturing"),
    ("lean manufacturing", "operations"),
    ("a supply chain", "operations"),
    ("the Roman Republic", "ancient history"),
    ("the Industrial Revolution", "modern history"),
    ("the printing press", "history of technology"),
    ("the Renaissance", "art history"),
    ("impressionist painting", "art history"),
    ("baroque music", "music history"),
    ("jazz improvisation", "music"),
    ("the sonnet form", "literature"),
    ("stoic philosophy", "philosophy"),
    ("utilitarian ethics", "philosophy"),
    ("cognitive behavioral therapy", "psychology"),
    ("the placebo effect", "psychology"),
    ("sourdough baking", "cooking"),
    ("fermentation", "food science"),
    ("a Mediterranean diet", "nutrition"),
    ("interval training", "fitness"),
    ("urban gardening", "horticulture"),
    ("composting", "horticulture"),
    ("chess openings", "games"),
];

struct FollowUp {
    query: &'static str,
    answer: &'static str,
}

/// `{t}` is replaced by the topic without its article, `{f}` by its field.
const FOLLOW_UPS: &[FollowUp] = &[
    FollowUp {
        query: "What are its key features?",
        answer: "The key features of {t} are the ideas that set it apart within {f}: its core structure, the guarantees it provides, and how practitioners reason about it.",
    },
    FollowUp {
        query: "How does it work?",
        answer: "At a high level {t} works by combining a few simple mechanisms from {f}, each building on the previous step until the overall behavior emerges.",
    },
    FollowUp {
        query: "What are its main advantages?",
        answer: "The main advantages of {t} are efficiency and clarity; within {f} it is valued because it solves a recurring problem well.",
    },
    FollowUp {
        query: "What are the common drawbacks?",
        answer: "Common drawbacks of {t} include added complexity and cases where the assumptions behind it do not hold, which practitioners in {f} learn to watch for.",
    },
    FollowUp {
        query: "Can you give an example?",
        answer: "A typical example of {t} comes from everyday {f} work, where it appears in a small, concrete form that makes the idea easy to see.",
    },
    FollowUp {
        query: "How is it used in practice?",
        answer: "In practice {t} is applied by teams working in {f}, usually alongside established tools and with careful attention to trade-offs.",
    },
    FollowUp {
        query: "What is its history?",
        answer: "The history of {t} traces back to early work in {f}; it was refined over decades as new needs and better tools appeared.",
    },
    FollowUp {
        query: "How does it compare to alternatives?",
        answer: "Compared with alternatives in {f}, {t} trades some flexibility for predictability, so the right choice depends on the workload.",
    },
    FollowUp {
        query: "Is it hard to learn?",
        answer: "Learning {t} takes some practice; people with a background in {f} usually pick up the basics quickly and master the details over time.",
    },
];

const OPENINGS: &[&str] = &["What is {a}?", "Can you explain {a}?", "What is {a} exactly?"];

const OPENING_ANSWER: &str = "{T} is a topic in {f}. In short, {t} describes a well known approach that people in {f} rely on, and it is usually introduced early because many other ideas build on it.";

fn bare(topic: &str) -> &str {
    topic.strip_prefix("a ").or_else(|| topic.strip_prefix("an ")).unwrap_or(topic)
}

fn fill(template: &str, topic: &str, field: &str) -> String {
    let t = bare(topic);
    let mut cap = t.to_owned();
    if let Some(first) = cap.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    template.replace("{a}", topic).replace("{T}", &cap).replace("{t}", t).replace("{f}", field)
}

/// Number of topics available, which bounds the corpus size.
pub fn topic_count() -> usize {
    TOPICS.len()
}

/// Builds one dialogue per topic. The first two dialogues are fixed: the
/// relational database and cloud computing conversations, both asking
/// "What are its key features?" first.
pub fn generate_corpus(seed: u64) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TOPICS
        .iter()
        .enumerate()
        .map(|(i, &(topic, field))| {
            let opening = if i < 2 { OPENINGS[0] } else { *OPENINGS.choose(&mut rng).unwrap() };
            let mut turns = vec![user(&fill(opening, topic, field)), assistant(&fill(OPENING_ANSWER, topic, field))];
            let n_follow = if i < 2 { 1 } else { rng.random_range(1..=2) };
            let mut picks: Vec<&FollowUp> = FOLLOW_UPS.choose_multiple(&mut rng, n_follow).collect();
            if i < 2 {
                picks = vec![&FOLLOW_UPS[0]];
            }
            for f in picks {
                turns.push(user(f.query));
                turns.push(assistant(&fill(f.answer, topic, field)));
            }
            Dialogue { id: format!("d{i:03}"), turns }
        })
        .collect()
}

fn user(text: &str) -> Turn {
    Turn::user(text).expect("corpus text is non-empty")
}

fn assistant(text: &str) -> Turn {
    Turn::assistant(text).expect("corpus text is non-empty")
}
