//! Writes the bundled demo corpus: six repository fixtures, hosting
//! metadata, a survivability registry, signatures and a pipeline config.
//!
//! cargo run -p forklens-core --example make_demo -- demo

use std::fs;
use std::path::PathBuf;

use forklens_core::ingest::{history_to_fixture_string, RepoHistory};
use forklens_core::synth::{demo_corpus, synthetic_signature, CORPUS_T0};
use forklens_core::vulnscan::{MatchMode, VulnSignature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const DAY: i64 = 86_400;

fn main() -> std::io::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    fs::create_dir_all(out.join("repos"))?;
    fs::create_dir_all(out.join("metadata"))?;
    let (c, (_, patch_time)) = demo_corpus(2018, 24);
    let mut repos: Vec<&RepoHistory> = vec![&c.parent];
    repos.extend(c.h1_forks.iter().map(|f| &f.0));
    repos.push(&c.bulk_upload.0);
    repos.push(&c.unrelated);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut entries = String::new();
    for h in &repos {
        let id = h.repo_id();
        fs::write(out.join(format!("repos/{id}.json")), history_to_fixture_string(h))?;
        let (open, closed) = (rng.random_range(0..20u64), rng.random_range(0..60u64));
        let meta = json!({
            "watch": rng.random_range(1..40u64),
            "star": rng.random_range(0..500u64),
            "fork_count": rng.random_range(0..80u64),
            "issues_total": open + closed,
            "issues_open": open,
            "issues_closed": closed,
            "branches": rng.random_range(1..6u64),
            "releases": rng.random_range(0..12u64),
            "pull_requests": rng.random_range(0..40u64),
            "fetched_at": CORPUS_T0 + 60 * DAY,
        });
        fs::write(out.join(format!("metadata/{id}.json")), serde_json::to_string_pretty(&meta)? + "\n")?;
        entries.push_str(&format!(
            "\n[[repos]]\nrepo_id = \"{id}\"\nsource = \"repos/{id}.json\"\nmetadata = \"metadata/{id}.json\"\n"
        ));
    }

    let sigs = vec![
        synthetic_signature("CVE-DEMO-0001", patch_time),
        VulnSignature {
            cve_id: "CVE-DEMO-0002".into(),
            cvss: 7.5,
            category: "Denial of service".into(),
            reference_patch_time: patch_time - 30 * DAY,
            match_mode: MatchMode::Any,
            vuln_fragments: vec!["while (1) { recv(sock, buf, 1, 0); }".into()],
            patch_fragments: vec!["if (++spins > MAX_SPINS) break;".into()],
        },
    ];
    fs::write(
        out.join("signatures.json"),
        serde_json::to_string_pretty(&json!({ "signatures": sigs }))? + "\n",
    )?;

    fs::write(
        out.join("registry.csv"),
        "repo_id,delisted_market,repo_unavailable,scam_list_a,scam_list_b\n\
         parent,false,false,false,false\n\
         fork0,true,false,false,false\n\
         fork1,false,false,true,false\n\
         fork2,false,false,false,false\n\
         bulkcoin,false,true,false,true\n\
         unrelated,false,false,false,false\n",
    )?;

    let config = format!(
        "# Demo pipeline over six synthetic repositories.\n\
         as_of = {as_of}\n\
         parent_repo_id = \"parent\"\n\
         registry_file = \"registry.csv\"\n\
         output_dir = \"out\"\n\
         \n\
         [kmeans]\n\
         k_range = [2, 4]\n\
         seed = 42\n\
         \n\
         [similarity]\n\
         min_match = 9\n\
         pairing = \"greedy\"\n\
         \n\
         [lineage]\n\
         prefix_probe = 10\n\
         window_secs = {window}\n\
         stride = 1\n\
         default_threshold = 0.929\n\
         \n\
         [vulnscan]\n\
         signature_file = \"signatures.json\"\n\
         fallback_file_limit = 30\n\
         \n\
         [crosstab]\n\
         similarity_buckets = [0.9, 0.95]\n\
         {entries}",
        as_of = CORPUS_T0 + 60 * DAY,
        window = 6 * 30 * DAY,
    );
    fs::write(out.join("forklens.toml"), config)?;
    println!("wrote demo corpus to {}", out.display());
    Ok(())
}
