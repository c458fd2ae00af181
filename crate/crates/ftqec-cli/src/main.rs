fn main() {
    eprintln!("ftqec CLI: subcommands not wired up yet");
    std::process::exit(2);
}
