//! Loads the shipped label space, splits it into the two network paths and
//! shows that the reassembly permutation restores class-id order.

use aquanet::taxonomy::{ClassTaxonomy, Group};

fn main() -> aquanet::Result<()> {
    let tax = ClassTaxonomy::atlantis();
    let split = tax.path_split();
    println!("{} classes, {} aquatic, {} other", tax.num_classes(), split.aquatic.len(), split.nonaquatic.len());
    for group in [Group::Artificial, Group::Natural, Group::General] {
        println!("  {group:<10} {}", tax.group_ids(group).len());
    }

    let toy = ClassTaxonomy::from_toml_str(
        r#"
        ignore_id = 255
        [[class]]
        id = 0
        name = "land"
        group = "general"
        aquatic = false
        [[class]]
        id = 1
        name = "water"
        group = "natural"
        aquatic = true
        "#,
    )?;
    let s = toy.path_split();
    let concat = s.concatenated();
    let perm = s.reassembly();
    let restored: Vec<u8> = perm.iter().map(|&pos| concat[pos]).collect();
    println!("toy: concatenated {concat:?}, reassembly {perm:?}, restored {restored:?}");
    Ok(())
}
