fn main() {
    eprintln!("roost: not wired up yet");
    std::process::exit(2);
}
