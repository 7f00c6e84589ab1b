//! Every flag of every subcommand carries help text and shows up in
//! `--help`; nothing is hidden.

use cptsketch_cli::command;

#[test]
fn every_flag_is_documented() {
    let mut root = command();
    root.build();
    let mut checked = 0;
    for sub in root.get_subcommands() {
        let mut sub = sub.clone();
        let help = sub.render_long_help().to_string();
        assert!(sub.get_about().is_some(), "{} has no description", sub.get_name());
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            assert!(!arg.is_hide_set(), "{} --{id} is hidden", sub.get_name());
            if id == "help" || id == "version" {
                continue;
            }
            assert!(
                arg.get_help().is_some() || arg.get_long_help().is_some(),
                "{} {id} has no help",
                sub.get_name()
            );
            match arg.get_long() {
                Some(long) => assert!(
                    help.contains(&format!("--{long}")),
                    "{} --{long} missing from help",
                    sub.get_name()
                ),
                None => {
                    let name = arg.get_value_names().map(|v| v[0].to_string()).unwrap_or_default();
                    assert!(help.contains(&name), "{} <{name}> missing from help", sub.get_name());
                }
            }
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} arguments inspected");
}

#[test]
fn all_subcommands_exist() {
    let names: Vec<String> = command()
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for want in ["gen", "convert", "dataset", "suite", "baseline", "stats", "trace", "validate", "score"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
}
