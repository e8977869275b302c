//! Relation-filtered retrieval over a user's social neighborhood: BM25 on
//! the relation words, a keyword re-rank, then packing into the Level-2 budget.
//! The store is the one left behind by the three-day walkthrough.

use egomem::backends::HashingTextEncoder;
use egomem::harness::{simulate_lifelong_run, walkthrough_scenario};
use egomem::retrieval::{build_documents, QueryGroups, Retriever};
use egomem::runtime::AgentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = walkthrough_scenario(1);
    let store = simulate_lifelong_run(&scenario, &AgentConfig::default())?.store;
    let emily = store.find_by_name("Emily").ok_or("Emily was not enrolled")?;
    let encoder = HashingTextEncoder::new(scenario.spec.seed);

    let docs = build_documents(&store, emily)?;
    println!("{} candidate documents for {}:", docs.len(), store.lookup_user(emily)?.name);
    for d in &docs {
        println!("  [{:>3} tokens] {}", d.token_cost, d.text);
    }

    let retriever = Retriever::default();
    for (relations, keywords) in
        [(vec!["colleague"], vec!["tennis"]), (vec!["sister"], vec![]), (vec!["cousin"], vec!["chess"])]
    {
        let groups = QueryGroups::new(relations, keywords)?;
        let result = retriever.retrieve(&groups, &store, emily, &encoder)?;
        println!(
            "\n{} -> {} hits, {} / {} tokens",
            groups.format(),
            result.hits.len(),
            result.total_cost,
            retriever.budget
        );
        for h in &result.hits {
            println!("  {:.3}  {}", h.rank.score(), h.document.text);
        }
    }
    Ok(())
}
